// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "multilora/config.hpp"
#include "multilora/engine.hpp"
#include "multilora/error.hpp"
#include "multilora/registry.hpp"
#include "multilora/scheduler.hpp"
#include "multilora/serial.hpp"

namespace multilora {

/// One documented status code per error kind; the mapping is total over
/// ErrorKind so nothing can fall through to an undocumented response.
inline int status_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ShapeMismatch: return 422;
        case ErrorKind::DomainError: return 400;
        case ErrorKind::Validation: return 400;
        case ErrorKind::FormatError: return 400;
        case ErrorKind::UnsupportedVersion: return 400;
        case ErrorKind::Truncation: return 400;
        case ErrorKind::Corruption: return 400;
        case ErrorKind::DuplicateId: return 409;
        case ErrorKind::UnknownId: return 404;
        case ErrorKind::CapacityExhausted: return 507;
        case ErrorKind::RankOverflow: return 422;
        case ErrorKind::LayerMismatch: return 422;
        case ErrorKind::InvalidMask: return 500;
        case ErrorKind::MixedBatch: return 422;
        case ErrorKind::OutOfVocab: return 422;
        case ErrorKind::UnsortedTrace: return 400;
        case ErrorKind::IoError: return 500;
        case ErrorKind::ConfigError: return 400;
    }
    return 500;
}

/// Shared-endpoint service: inference requests flow through the scheduler
/// queue into one batch-execution loop over the engine; management calls hit
/// the engine directly and inherit its readers-writer contract. The service
/// itself does no numeric work, so response logits reproduce engine output
/// exactly after the wire round trip.
class InferenceService {
public:
    explicit InferenceService(const ServerConfig& config)
        : config_(config),
          registry_(config.registry_dir),
          engine_(build_model(load_model_config(config.model_config_path)), config.n_slots,
                  config.r_max),
          mode_(config.mode),
          started_at_(std::chrono::steady_clock::now()) {
        for (const auto& id : registry_.list()) {
            engine_.register_adapter(registry_.load(id));
        }
        setup_routes();
    }

    ~InferenceService() { stop(); }

    /// Binds (port 0 picks a free one), starts the executor and the listener.
    /// Returns the bound port.
    int start() {
        if (config_.listen_port == 0) {
            port_ = server_.bind_to_any_port(config_.listen_host);
        } else {
            if (!server_.bind_to_port(config_.listen_host, config_.listen_port)) {
                throw Error(ErrorKind::IoError,
                            "cannot bind " + config_.listen_host + ":" +
                                std::to_string(config_.listen_port));
            }
            port_ = config_.listen_port;
        }
        if (port_ <= 0) {
            throw Error(ErrorKind::IoError, "cannot bind " + config_.listen_host);
        }
        running_.store(true);
        executor_ = std::thread([this] { executor_loop(); });
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        if (!running_.exchange(false)) {
            return;
        }
        server_.stop();
        if (listener_.joinable()) {
            listener_.join();
        }
        if (executor_.joinable()) {
            executor_.join();
        }
    }

    int port() const { return port_; }
    MultiLoraEngine& engine() { return engine_; }
    AdapterRegistry& registry() { return registry_; }
    ServingMode mode() const { return mode_.load(); }

private:
    struct InferOutcome {
        Matrix logits;
        double latency_ms = 0.0;
        ServingMode mode = ServingMode::BatchedMulti;
    };

    std::int64_t now_ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - started_at_)
            .count();
    }

    static void reply_error(httplib::Response& res, const Error& err) {
        nlohmann::json body{{"error", to_string(err.kind())}, {"message", err.what()}};
        res.status = status_for(err.kind());
        res.set_content(body.dump(), "application/json");
    }

    void setup_routes() {
        server_.new_task_queue = [] { return new httplib::ThreadPool(16); };

        server_.Post("/v1/infer", [this](const httplib::Request& req, httplib::Response& res) {
            handle_infer(req, res);
        });
        server_.Put(R"(/v1/adapters/([^/]+))",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        handle_put_adapter(req.matches[1], req.body, res);
                    });
        server_.Delete(R"(/v1/adapters/([^/]+))",
                       [this](const httplib::Request& req, httplib::Response& res) {
                           handle_delete_adapter(req.matches[1], res);
                       });
        server_.Get("/v1/adapters", [this](const httplib::Request&, httplib::Response& res) {
            handle_list_adapters(res);
        });
        server_.Get("/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
            handle_metrics(res);
        });
        server_.Post("/v1/mode", [this](const httplib::Request& req, httplib::Response& res) {
            handle_mode(req.body, res);
        });
    }

    void handle_infer(const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object() || !body.contains("tokens") ||
            !body["tokens"].is_array()) {
            reply_error(res, Error(ErrorKind::Validation,
                                   "body must be a JSON object with a `tokens` array"));
            return;
        }
        std::vector<int> tokens;
        for (const auto& t : body["tokens"]) {
            if (!t.is_number_integer()) {
                reply_error(res, Error(ErrorKind::Validation, "tokens must be integers"));
                return;
            }
            tokens.push_back(t.get<int>());
        }
        std::optional<std::string> adapter_id;
        if (body.contains("adapter_id") && !body["adapter_id"].is_null()) {
            if (!body["adapter_id"].is_string()) {
                reply_error(res, Error(ErrorKind::Validation, "adapter_id must be a string"));
                return;
            }
            adapter_id = body["adapter_id"].get<std::string>();
        }

        try {
            if (tokens.empty()) {
                throw Error(ErrorKind::Validation, "tokens must be nonempty");
            }
            const std::size_t vocab = engine_.model().config().vocab;
            for (int t : tokens) {
                if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
                    throw Error(ErrorKind::OutOfVocab,
                                "token " + std::to_string(t) + " is outside vocab " +
                                    std::to_string(vocab));
                }
            }
            if (adapter_id && !engine_.has_adapter(*adapter_id)) {
                throw Error(ErrorKind::UnknownId, "adapter '" + *adapter_id + "' is not registered");
            }

            InferenceRequest request;
            request.request_id = "q" + std::to_string(next_request_id_.fetch_add(1));
            request.adapter_id = adapter_id;
            request.tokens = std::move(tokens);
            request.arrival_ms = now_ms();

            auto promise = std::make_shared<std::promise<InferOutcome>>();
            auto future = promise->get_future();
            {
                std::lock_guard lock(pending_mu_);
                pending_[request.request_id] = promise;
            }
            std::string request_id = request.request_id;
            queue_.enqueue(std::move(request));

            if (future.wait_for(std::chrono::seconds(60)) != std::future_status::ready) {
                throw Error(ErrorKind::IoError, "inference timed out");
            }
            InferOutcome outcome = future.get();

            nlohmann::json logits = nlohmann::json::array();
            for (std::size_t i = 0; i < outcome.logits.rows(); ++i) {
                nlohmann::json row = nlohmann::json::array();
                for (std::size_t j = 0; j < outcome.logits.cols(); ++j) {
                    row.push_back(outcome.logits(i, j));
                }
                logits.push_back(std::move(row));
            }
            nlohmann::json reply{{"request_id", request_id},
                                 {"logits", std::move(logits)},
                                 {"latency_ms", outcome.latency_ms},
                                 {"mode", to_string(outcome.mode)}};
            res.status = 200;
            res.set_content(reply.dump(), "application/json");
        } catch (const Error& err) {
            reply_error(res, err);
        }
    }

    void handle_put_adapter(const std::string& id, const std::string& body,
                            httplib::Response& res) {
        try {
            if (!valid_adapter_id(id)) {
                throw Error(ErrorKind::Validation, "adapter id '" + id + "' is invalid");
            }
            LoraAdapter adapter = deserialize_adapter(
                reinterpret_cast<const std::uint8_t*>(body.data()), body.size(), id);
            std::size_t slot = engine_.register_adapter(adapter);
            try {
                if (registry_.contains(id)) {
                    registry_.remove(id);  // stale file from an earlier run
                }
                registry_.store(adapter);
            } catch (...) {
                engine_.evict_adapter(id);
                throw;
            }
            nlohmann::json reply{{"id", id}, {"slot", slot}};
            res.status = 201;
            res.set_content(reply.dump(), "application/json");
        } catch (const Error& err) {
            reply_error(res, err);
        }
    }

    void handle_delete_adapter(const std::string& id, httplib::Response& res) {
        try {
            engine_.evict_adapter(id);
            if (registry_.contains(id)) {
                registry_.remove(id);
            }
            res.status = 204;
        } catch (const Error& err) {
            reply_error(res, err);
        }
    }

    void handle_list_adapters(httplib::Response& res) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& info : engine_.list_adapters()) {
            nlohmann::json ranks = nlohmann::json::object();
            for (const auto& [layer, rank] : info.layer_ranks) {
                ranks[layer] = rank;
            }
            out.push_back(nlohmann::json{{"id", info.id},
                                         {"slot", info.slot},
                                         {"layer_ranks", std::move(ranks)},
                                         {"payload_bytes", info.payload_bytes},
                                         {"merged_cached", info.merged_cached}});
        }
        res.status = 200;
        res.set_content(out.dump(), "application/json");
    }

    void handle_metrics(httplib::Response& res) {
        auto m = engine_.metrics();
        nlohmann::json out{{"mode", to_string(mode_.load())},
                           {"queue_depth", queue_.size()},
                           {"swaps", m.swaps},
                           {"batches_served", m.batches_served},
                           {"requests_served", m.requests_served},
                           {"merged_cache_entries", m.merged_cache_entries},
                           {"merged_cache_bytes", m.merged_cache_bytes},
                           {"registered_adapters", m.registered_adapters},
                           {"free_slots", m.free_slots}};
        res.status = 200;
        res.set_content(out.dump(), "application/json");
    }

    void handle_mode(const std::string& body, httplib::Response& res) {
        try {
            std::string name = detail::trim(body);
            mode_.store(parse_serving_mode(name));
            nlohmann::json reply{{"mode", name}};
            res.status = 200;
            res.set_content(reply.dump(), "application/json");
        } catch (const Error& err) {
            reply_error(res, err);
        }
    }

    // ------------------------------------------------------------------
    // Batch execution
    // ------------------------------------------------------------------

    void executor_loop() {
        while (true) {
            const bool live = running_.load();
            SchedulerConfig cfg = config_.scheduler;
            if (!live) {
                cfg.window_ms = 0;  // drain without waiting
            }
            auto batch = queue_.form_batch(now_ms(), cfg);
            if (!batch) {
                if (!live) {
                    break;
                }
                std::this_thread::sleep_for(std::chrono::microseconds(500));
                continue;
            }
            execute_batch(*batch);
        }
    }

    void execute_batch(const Batch& batch) {
        const ServingMode mode = mode_.load();
        if (mode == ServingMode::Swap) {
            for (const auto& group : split_for_swap(batch)) {
                std::vector<InferenceRequest> requests;
                requests.reserve(group.size());
                for (const auto* r : group) {
                    requests.push_back(*r);
                }
                execute_group(mode, requests);
            }
        } else {
            execute_group(mode, batch.requests);
        }
    }

    void execute_group(ServingMode mode, const std::vector<InferenceRequest>& requests) {
        std::vector<EngineRequest> engine_requests;
        engine_requests.reserve(requests.size());
        for (const auto& r : requests) {
            engine_requests.push_back(EngineRequest{r.adapter_id, r.tokens});
        }
        try {
            std::vector<Matrix> outputs = engine_.serve_batch(mode, engine_requests);
            const std::int64_t done = now_ms();
            for (std::size_t i = 0; i < requests.size(); ++i) {
                fulfill(requests[i].request_id,
                        InferOutcome{std::move(outputs[i]),
                                     static_cast<double>(done - requests[i].arrival_ms), mode});
            }
        } catch (const Error&) {
            if (requests.size() == 1) {
                fail(requests[0].request_id, std::current_exception());
                return;
            }
            // One bad request (e.g. adapter evicted while queued) must not sink
            // the whole batch; retry each alone.
            for (const auto& r : requests) {
                execute_group(mode, {r});
            }
        }
    }

    void fulfill(const std::string& request_id, InferOutcome outcome) {
        std::shared_ptr<std::promise<InferOutcome>> promise;
        {
            std::lock_guard lock(pending_mu_);
            auto it = pending_.find(request_id);
            if (it == pending_.end()) {
                return;
            }
            promise = it->second;
            pending_.erase(it);
        }
        promise->set_value(std::move(outcome));
    }

    void fail(const std::string& request_id, std::exception_ptr error) {
        std::shared_ptr<std::promise<InferOutcome>> promise;
        {
            std::lock_guard lock(pending_mu_);
            auto it = pending_.find(request_id);
            if (it == pending_.end()) {
                return;
            }
            promise = it->second;
            pending_.erase(it);
        }
        promise->set_exception(error);
    }

    ServerConfig config_;
    AdapterRegistry registry_;
    MultiLoraEngine engine_;
    std::atomic<ServingMode> mode_;
    std::chrono::steady_clock::time_point started_at_;

    httplib::Server server_;
    RequestQueue queue_;
    std::map<std::string, std::shared_ptr<std::promise<InferOutcome>>> pending_;
    std::mutex pending_mu_;
    std::atomic<std::uint64_t> next_request_id_{1};
    std::atomic<bool> running_{false};
    std::thread executor_;
    std::thread listener_;
    int port_ = 0;
};

}  // namespace multilora
