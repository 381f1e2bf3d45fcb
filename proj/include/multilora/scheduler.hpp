// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "multilora/adapter.hpp"
#include "multilora/engine.hpp"
#include "multilora/error.hpp"

namespace multilora {

struct InferenceRequest {
    std::string request_id;
    std::optional<std::string> adapter_id;  // nullopt = base model
    std::vector<int> tokens;
    std::int64_t arrival_ms = 0;

    void validate() const {
        if (request_id.empty()) {
            throw Error(ErrorKind::Validation, "request id is empty");
        }
        if (tokens.empty()) {
            throw Error(ErrorKind::Validation, "request '" + request_id + "' has no tokens");
        }
        if (arrival_ms < 0) {
            throw Error(ErrorKind::Validation,
                        "request '" + request_id + "' has negative arrival time");
        }
    }
};

struct SchedulerConfig {
    std::size_t max_batch = 8;
    std::int64_t window_ms = 10;

    void validate() const {
        if (max_batch < 1) {
            throw Error(ErrorKind::DomainError, "max_batch must be >= 1");
        }
        if (window_ms < 0) {
            throw Error(ErrorKind::DomainError, "window_ms must be >= 0");
        }
    }
};

struct Batch {
    std::vector<InferenceRequest> requests;
    std::int64_t formed_ms = 0;
};

/// FIFO buffer with duplicate-id rejection. Batches leave as contiguous
/// prefixes: immediately once max_batch requests queue up, otherwise when the
/// oldest request has waited out the window.
class RequestQueue {
public:
    void enqueue(InferenceRequest request) {
        request.validate();
        std::lock_guard lock(mu_);
        if (!seen_ids_.insert(request.request_id).second) {
            throw Error(ErrorKind::DuplicateId,
                        "request id '" + request.request_id + "' already enqueued");
        }
        queue_.push_back(std::move(request));
    }

    std::optional<Batch> form_batch(std::int64_t now_ms, const SchedulerConfig& config) {
        config.validate();
        std::lock_guard lock(mu_);
        if (queue_.empty()) {
            return std::nullopt;
        }
        const bool full = queue_.size() >= config.max_batch;
        const bool window_hit = now_ms - queue_.front().arrival_ms >= config.window_ms;
        if (!full && !window_hit) {
            return std::nullopt;
        }
        Batch batch;
        batch.formed_ms = now_ms;
        const std::size_t take = std::min(queue_.size(), config.max_batch);
        for (std::size_t i = 0; i < take; ++i) {
            batch.requests.push_back(std::move(queue_.front()));
            queue_.pop_front();
        }
        return batch;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return queue_.size();
    }

    std::int64_t oldest_arrival_or(std::int64_t fallback) const {
        std::lock_guard lock(mu_);
        return queue_.empty() ? fallback : queue_.front().arrival_ms;
    }

private:
    std::deque<InferenceRequest> queue_;
    std::set<std::string> seen_ids_;
    mutable std::mutex mu_;
};

/// Affine per-batch service cost plus a per-swap penalty. Values are
/// configuration, not measurements.
struct CostModel {
    double base_ms = 1.0;
    double per_row_ms = 1.0;
    double swap_ms = 0.0;
};

struct WorkloadMetrics {
    std::vector<double> latencies_ms;  // per request, completion order
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p99_ms = 0.0;
    double throughput_rps = 0.0;
    std::map<std::size_t, std::size_t> batch_histogram;  // batch size -> batch count
    std::uint64_t swaps = 0;
    std::uint64_t batches = 0;
    std::size_t completed = 0;
    double makespan_ms = 0.0;

    /// Requests accounted by the histogram; always equals `completed`.
    std::size_t histogram_requests() const {
        std::size_t total = 0;
        for (const auto& [size, count] : batch_histogram) {
            total += size * count;
        }
        return total;
    }

    std::string to_text() const {
        std::ostringstream out;
        out << "completed: " << completed << '\n';
        out << "batches: " << batches << '\n';
        out << "mean_ms: " << mean_ms << '\n';
        out << "p50_ms: " << p50_ms << '\n';
        out << "p99_ms: " << p99_ms << '\n';
        out << "throughput_rps: " << throughput_rps << '\n';
        out << "swaps: " << swaps << '\n';
        out << "makespan_ms: " << makespan_ms << '\n';
        for (const auto& [size, count] : batch_histogram) {
            out << "batch_size_" << size << ": " << count << '\n';
        }
        return out.str();
    }
};

inline double percentile_nearest_rank(std::vector<double> values, double q) {
    if (values.empty()) {
        return 0.0;
    }
    std::sort(values.begin(), values.end());
    std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    rank = std::max<std::size_t>(rank, 1);
    return values[rank - 1];
}

/// Splits a batch into per-adapter sub-batches in first-appearance order;
/// how swap-mode executors handle mixed batches.
inline std::vector<std::vector<const InferenceRequest*>> split_for_swap(const Batch& batch) {
    std::vector<std::optional<std::string>> order;
    std::vector<std::vector<const InferenceRequest*>> groups;
    for (const auto& request : batch.requests) {
        auto it = std::find(order.begin(), order.end(), request.adapter_id);
        if (it == order.end()) {
            order.push_back(request.adapter_id);
            groups.emplace_back();
            it = order.end() - 1;
        }
        groups[static_cast<std::size_t>(it - order.begin())].push_back(&request);
    }
    return groups;
}

/// Single-executor discrete-event simulation of a trace under one serving
/// mode. The executor forms a batch whenever one is ready and it is idle;
/// swap mode splits mixed batches and pays swap_ms whenever the pathway
/// changes, carrying the pathway across batches.
inline WorkloadMetrics simulate_workload(const std::vector<InferenceRequest>& trace,
                                         ServingMode mode, const SchedulerConfig& config,
                                         const CostModel& cost) {
    config.validate();
    for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
        if (trace[i + 1].arrival_ms < trace[i].arrival_ms) {
            throw Error(ErrorKind::UnsortedTrace,
                        "trace is not sorted by arrival time at index " + std::to_string(i + 1));
        }
    }

    WorkloadMetrics metrics;
    RequestQueue queue;
    std::map<std::string, double> completion_by_id;
    std::map<std::string, std::int64_t> arrival_by_id;

    std::size_t next_arrival = 0;
    double now = 0.0;
    std::optional<std::string> pathway;  // swap-mode state, starts at base

    auto admit_until = [&](double t) {
        while (next_arrival < trace.size() &&
               static_cast<double>(trace[next_arrival].arrival_ms) <= t) {
            arrival_by_id[trace[next_arrival].request_id] = trace[next_arrival].arrival_ms;
            queue.enqueue(trace[next_arrival]);
            ++next_arrival;
        }
    };

    while (true) {
        admit_until(now);
        auto batch = queue.form_batch(static_cast<std::int64_t>(now), config);
        if (!batch) {
            // Idle: jump to the next arrival or the oldest request's deadline.
            double t_window = queue.size() == 0
                                  ? std::numeric_limits<double>::infinity()
                                  : static_cast<double>(queue.oldest_arrival_or(0)) +
                                        static_cast<double>(config.window_ms);
            double t_arrival = next_arrival < trace.size()
                                   ? static_cast<double>(trace[next_arrival].arrival_ms)
                                   : std::numeric_limits<double>::infinity();
            double t_next = std::min(t_window, t_arrival);
            if (!std::isfinite(t_next)) {
                break;  // drained
            }
            now = std::max(now, t_next);
            continue;
        }

        metrics.batches += 1;
        metrics.batch_histogram[batch->requests.size()] += 1;

        if (mode == ServingMode::Swap) {
            for (const auto& group : split_for_swap(*batch)) {
                const std::optional<std::string>& target = group.front()->adapter_id;
                if (pathway != target) {
                    now += cost.swap_ms;
                    metrics.swaps += 1;
                    pathway = target;
                }
                now += cost.base_ms + cost.per_row_ms * static_cast<double>(group.size());
                for (const auto* request : group) {
                    completion_by_id[request->request_id] = now;
                }
            }
        } else {
            now += cost.base_ms + cost.per_row_ms * static_cast<double>(batch->requests.size());
            for (const auto& request : batch->requests) {
                completion_by_id[request.request_id] = now;
            }
        }
    }

    metrics.completed = completion_by_id.size();
    double last_completion = 0.0;
    double total = 0.0;
    for (const auto& request : trace) {
        auto it = completion_by_id.find(request.request_id);
        if (it == completion_by_id.end()) {
            continue;
        }
        double latency = it->second - static_cast<double>(request.arrival_ms);
        metrics.latencies_ms.push_back(latency);
        total += latency;
        last_completion = std::max(last_completion, it->second);
    }
    if (!metrics.latencies_ms.empty()) {
        metrics.mean_ms = total / static_cast<double>(metrics.latencies_ms.size());
        metrics.p50_ms = percentile_nearest_rank(metrics.latencies_ms, 0.50);
        metrics.p99_ms = percentile_nearest_rank(metrics.latencies_ms, 0.99);
    }
    metrics.makespan_ms = last_completion;
    if (last_completion > 0.0) {
        metrics.throughput_rps =
            static_cast<double>(metrics.completed) / (last_completion / 1000.0);
    }
    return metrics;
}

/// Trace file: one request per line, `arrival_ms adapter_id|- token,token,...`.
inline std::vector<InferenceRequest> parse_trace(const std::string& text) {
    std::vector<InferenceRequest> trace;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream fields(line);
        std::int64_t arrival = 0;
        std::string adapter, tokens_csv;
        if (!(fields >> arrival >> adapter >> tokens_csv)) {
            throw Error(ErrorKind::FormatError,
                        "trace line " + std::to_string(lineno) + " is malformed");
        }
        InferenceRequest request;
        request.request_id = "r" + std::to_string(trace.size() + 1);
        request.arrival_ms = arrival;
        if (adapter != "-") {
            if (!valid_adapter_id(adapter)) {
                throw Error(ErrorKind::FormatError,
                            "trace line " + std::to_string(lineno) + " has invalid adapter id");
            }
            request.adapter_id = adapter;
        }
        std::istringstream token_stream(tokens_csv);
        std::string item;
        while (std::getline(token_stream, item, ',')) {
            try {
                request.tokens.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw Error(ErrorKind::FormatError,
                            "trace line " + std::to_string(lineno) + " has invalid token '" +
                                item + "'");
            }
        }
        request.validate();
        trace.push_back(std::move(request));
    }
    return trace;
}

}  // namespace multilora
