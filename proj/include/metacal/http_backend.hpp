#pragma once

#include <string>

#include "metacal/gateway.hpp"

namespace metacal {

struct HttpBackendConfig {
    std::string base_url;  // scheme://host[:port]
    std::string model;
    std::string path = "/v1/chat/completions";
    std::string api_key_env = "METACAL_API_KEY";
    int max_attempts = 5;
    int connect_timeout_ms = 10000;
    int read_timeout_ms = 120000;
    // Exponential backoff between transient failures, doubling from base up
    // to the cap. No jitter: retry timing has no bearing on artifacts.
    int backoff_base_ms = 250;
    int backoff_cap_ms = 4000;
    std::string id_label;  // defaults to "http:<model>"
};

// Chat-completions client with structured-output constraints. Transient
// failures (connect errors, timeouts, 408/429/5xx) are retried with capped
// exponential backoff, then surfaced as TransportError; other non-2xx
// statuses fail fast as BackendError. The credential is read from the
// configured environment variable and never logged.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    const std::string& id() const override { return id_; }
    std::string complete_raw(const CompletionRequest& request) override;

    // Chat payload for one request: messages plus a strict JSON-schema
    // response_format matching the request's schema_id.
    static Json build_payload(const CompletionRequest& request, const std::string& model);
    static Json response_schema(SchemaId schema);

private:
    HttpBackendConfig config_;
    std::string api_key_;
    std::string id_;
};

}  // namespace metacal
