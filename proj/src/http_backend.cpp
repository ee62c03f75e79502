#include "metacal/http_backend.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "metacal/errors.hpp"

namespace metacal {

namespace {

bool transient_status(int status) {
    return status == 408 || status == 429 || (status >= 500 && status < 600);
}

std::string schema_name(SchemaId schema) {
    return std::string("metacal_") + to_string(schema);
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ConfigError("http backend needs a base_url");
    if (config_.model.empty()) throw ConfigError("http backend needs a model name");
    if (config_.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) {
        throw ConfigError("environment variable " + config_.api_key_env +
                          " not set (required by the remote backend)");
    }
    api_key_ = key;
    id_ = config_.id_label.empty() ? "http:" + config_.model : config_.id_label;
}

Json HttpBackend::response_schema(SchemaId schema) {
    switch (schema) {
        case SchemaId::single_question:
            return Json{{"type", "object"},
                        {"properties",
                         Json{{"answer", Json{{"type", Json::array({"string", "integer"})}}},
                              {"confidence",
                               Json{{"type", "number"}, {"minimum", 0}, {"maximum", 1}}}}},
                        {"required", Json::array({"answer", "confidence"})},
                        {"additionalProperties", false}};
        case SchemaId::comparison:
            return Json{{"type", "object"},
                        {"properties",
                         Json{{"choice", Json{{"type", "string"},
                                              {"enum", Json::array({"Q1", "Q2"})}}},
                              {"answer_q1", Json{{"type", "string"}}},
                              {"answer_q2", Json{{"type", "string"}}}}},
                        {"required", Json::array({"choice", "answer_q1", "answer_q2"})},
                        {"additionalProperties", false}};
        case SchemaId::equivalence_judge:
            return Json{{"type", "object"},
                        {"properties", Json{{"equivalent", Json{{"type", "boolean"}}}}},
                        {"required", Json::array({"equivalent"})},
                        {"additionalProperties", false}};
    }
    throw ConfigError("unknown schema value");
}

Json HttpBackend::build_payload(const CompletionRequest& request, const std::string& model) {
    Json messages = Json::array();
    if (request.prompt.system_text) {
        messages.push_back(Json{{"role", "system"}, {"content", *request.prompt.system_text}});
    }
    messages.push_back(Json{{"role", "user"}, {"content", request.prompt.user_text}});
    return Json{{"model", model},
                {"temperature", request.temperature},
                {"messages", std::move(messages)},
                {"response_format",
                 Json{{"type", "json_schema"},
                      {"json_schema", Json{{"name", schema_name(request.schema_id)},
                                           {"strict", true},
                                           {"schema", response_schema(request.schema_id)}}}}}};
}

std::string HttpBackend::complete_raw(const CompletionRequest& request) {
    const std::string body = build_payload(request, config_.model).dump();
    std::string last_failure;

    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        if (attempt > 1) {
            const int shift = attempt - 2;
            long long wait = config_.backoff_base_ms;
            for (int i = 0; i < shift && wait < config_.backoff_cap_ms; ++i) wait *= 2;
            wait = std::min<long long>(wait, config_.backoff_cap_ms);
            std::this_thread::sleep_for(std::chrono::milliseconds(wait));
        }

        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.connect_timeout_ms / 1000,
                                      (config_.connect_timeout_ms % 1000) * 1000);
        client.set_read_timeout(config_.read_timeout_ms / 1000,
                                (config_.read_timeout_ms % 1000) * 1000);
        client.set_bearer_token_auth(api_key_);

        httplib::Result result = client.Post(config_.path, body, "application/json");
        if (!result) {
            last_failure = "connection error: " + httplib::to_string(result.error());
            continue;
        }
        if (transient_status(result->status)) {
            last_failure = "http status " + std::to_string(result->status);
            continue;
        }
        if (result->status < 200 || result->status >= 300) {
            throw BackendError("backend " + id_ + " returned status " +
                               std::to_string(result->status) + ": " +
                               redact(result->body, api_key_));
        }

        const Json envelope = Json::parse(result->body, nullptr, false);
        if (envelope.is_discarded()) {
            throw BackendError("backend " + id_ + " returned a non-JSON body");
        }
        try {
            return envelope.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const Json::exception&) {
            throw BackendError("backend " + id_ +
                               " response missing choices[0].message.content");
        }
    }
    throw TransportError("backend " + id_ + " unreachable after " +
                         std::to_string(config_.max_attempts) + " attempts; last failure: " +
                         last_failure);
}

}  // namespace metacal
