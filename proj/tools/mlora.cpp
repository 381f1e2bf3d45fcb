// SPDX-License-Identifier: Apache-2.0
//
// mlora — operational CLI for the multi-LoRA serving engine.
//
//   gen-model     write a deterministic base-weights file from a model config
//   gen-adapter   write a random adapter file from seed + placement + rank
//   merge         fold an adapter into base weights, optionally report the
//                 unmerge round-trip error
//   serve         run the HTTP service from a server config
//   bench         simulate a trace under each serving mode and print a table
//   sync-plan     print the adapters a local registry must fetch from a remote

#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "multilora/multilora.hpp"
#include "multilora/server.hpp"

namespace {

using namespace multilora;

ModelConfig model_config_or_default(const std::string& path) {
    if (path.empty()) {
        return ModelConfig{};  // vocab=32 d_model=16 n_layers=2 d_ff=32 seed=42
    }
    return load_model_config(path);
}

Placement parse_placement(const std::string& spec, bool shared_b) {
    static const std::map<std::string, AttachPoint> names = {
        {"attention", AttachPoint::AttentionQkv}, {"attention-out", AttachPoint::AttentionOut},
        {"embedding", AttachPoint::Embedding},    {"unembedding", AttachPoint::Unembedding},
        {"mlp", AttachPoint::Mlp},
    };
    Placement placement;
    placement.shared_b = shared_b;
    std::istringstream in(spec);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item == "all") {
            for (const auto& [name, point] : names) {
                placement.points.insert(point);
            }
            continue;
        }
        auto it = names.find(item);
        if (it == names.end()) {
            throw Error(ErrorKind::ConfigError,
                        "unknown placement '" + item +
                            "' (expected attention, attention-out, embedding, unembedding, mlp "
                            "or all)");
        }
        placement.points.insert(it->second);
    }
    placement.validate();
    return placement;
}

int cmd_gen_model(const std::string& model_path, const std::string& out_path) {
    ToyModel model(model_config_or_default(model_path));
    std::map<std::string, Matrix> weights;
    for (const auto& id : model.layer_ids()) {
        weights.emplace(id, model.weight(id));
    }
    write_bytes_file(out_path, serialize_weights(weights));
    std::cout << "wrote " << weights.size() << " weight matrices to " << out_path << "\n";
    return 0;
}

int cmd_gen_adapter(std::uint64_t seed, std::uint32_t rank, float alpha,
                    const std::string& placement_spec, bool shared_b,
                    const std::string& model_path, const std::string& id,
                    const std::string& out_path) {
    ToyModel model(model_config_or_default(model_path));
    Placement placement = parse_placement(placement_spec, shared_b);
    LoraAdapter adapter = attach_placement(model, placement, rank, alpha, id, seed);
    write_bytes_file(out_path, serialize_adapter(adapter));
    std::cout << "wrote adapter '" << id << "' (" << adapter.entries.size() << " entries, "
              << adapter.payload_bytes() << " payload bytes) to " << out_path << "\n";
    return 0;
}

int cmd_merge(const std::string& base_path, const std::string& adapter_path,
              const std::string& out_path, bool report_roundtrip) {
    std::map<std::string, Matrix> weights = deserialize_weights(read_bytes_file(base_path));
    LoraAdapter adapter = deserialize_adapter(read_bytes_file(adapter_path), "adapter");

    std::map<std::string, Matrix> merged = weights;
    for (const auto& [layer, delta] : adapter.entries) {
        auto it = merged.find(layer);
        if (it == merged.end()) {
            throw Error(ErrorKind::LayerMismatch,
                        "adapter targets layer '" + layer + "' missing from base weights");
        }
        it->second = merge_weights(weights.at(layer), delta);
    }
    write_bytes_file(out_path, serialize_weights(merged));
    std::cout << "merged " << adapter.entries.size() << " layers into " << out_path << "\n";

    if (report_roundtrip) {
        double max_err = 0.0;
        for (const auto& [layer, delta] : adapter.entries) {
            Matrix back = unmerge_weights(merged.at(layer), delta);
            const Matrix& orig = weights.at(layer);
            for (std::size_t i = 0; i < back.size(); ++i) {
                max_err = std::max(max_err, std::abs(static_cast<double>(back.data()[i]) -
                                                     static_cast<double>(orig.data()[i])));
            }
        }
        std::printf("max unmerge round-trip error: %.3e\n", max_err);
    }
    return 0;
}

volatile std::sig_atomic_t g_stop = 0;

int cmd_serve(const std::string& config_path) {
    ServerConfig config = load_server_config(config_path);
    InferenceService service(config);
    std::signal(SIGINT, [](int) { g_stop = 1; });
    std::signal(SIGTERM, [](int) { g_stop = 1; });
    int port = service.start();
    std::cout << "serving on " << config.listen_host << ":" << port << " in mode "
              << to_string(service.mode()) << std::endl;
    while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    service.stop();
    return 0;
}

int cmd_bench(const std::string& trace_path, const std::string& modes_csv, std::size_t max_batch,
              std::int64_t window_ms, double base_ms, double per_row_ms, double swap_ms) {
    std::vector<InferenceRequest> trace = parse_trace(read_text_file(trace_path));
    SchedulerConfig config{max_batch, window_ms};
    CostModel cost{base_ms, per_row_ms, swap_ms};

    std::vector<ServingMode> modes;
    std::istringstream in(modes_csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        modes.push_back(parse_serving_mode(item));
    }

    std::printf("%-8s %9s %8s %9s %9s %9s %12s %6s\n", "mode", "requests", "batches", "mean_ms",
                "p50_ms", "p99_ms", "rps", "swaps");
    for (ServingMode mode : modes) {
        WorkloadMetrics m = simulate_workload(trace, mode, config, cost);
        std::printf("%-8s %9zu %8llu %9.3f %9.3f %9.3f %12.3f %6llu\n", to_string(mode),
                    m.completed, static_cast<unsigned long long>(m.batches), m.mean_ms, m.p50_ms,
                    m.p99_ms, m.throughput_rps, static_cast<unsigned long long>(m.swaps));
    }
    return 0;
}

int cmd_sync_plan(const std::string& local_path, const std::string& remote_path) {
    Manifest local = Manifest::load(local_path);
    Manifest remote = Manifest::load(remote_path);
    for (const auto& id : diff_sync_plan(local, remote)) {
        std::cout << id << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-LoRA serving engine"};
    app.require_subcommand(1);

    std::string model_path, out_path, id = "adapter", placement_spec = "attention";
    std::uint64_t seed = 0;
    std::uint32_t rank = 2;
    float alpha = 1.0f;
    bool shared_b = false;

    auto* gen_model = app.add_subcommand("gen-model", "write base weights from a model config");
    gen_model->add_option("--model", model_path, "model config file (defaults when omitted)");
    gen_model->add_option("--out", out_path, "output weights file")->required();

    auto* gen_adapter = app.add_subcommand("gen-adapter", "write a random adapter file");
    gen_adapter->add_option("--seed", seed, "value stream seed")->required();
    gen_adapter->add_option("--rank", rank, "LoRA rank");
    gen_adapter->add_option("--alpha", alpha, "scaling numerator");
    gen_adapter->add_option("--placement", placement_spec,
                            "comma list of attention, attention-out, embedding, unembedding, "
                            "mlp, or all");
    gen_adapter->add_flag("--shared-b", shared_b, "share one B across W_Q/W_K/W_V per layer");
    gen_adapter->add_option("--model", model_path, "model config file (defaults when omitted)");
    gen_adapter->add_option("--id", id, "adapter id");
    gen_adapter->add_option("--out", out_path, "output adapter file")->required();

    std::string base_path, adapter_path;
    bool report_roundtrip = false;
    auto* merge = app.add_subcommand("merge", "fold an adapter into base weights");
    merge->add_option("--base", base_path, "base weights file")->required();
    merge->add_option("--adapter", adapter_path, "adapter file")->required();
    merge->add_option("--out", out_path, "output weights file")->required();
    merge->add_flag("--report-roundtrip", report_roundtrip, "print max unmerge round-trip error");

    std::string config_path;
    auto* serve = app.add_subcommand("serve", "run the HTTP service");
    serve->add_option("--config", config_path, "server config file")->required();

    std::string trace_path, modes_csv = "merged,swap,batched";
    std::size_t max_batch = 8;
    std::int64_t window_ms = 10;
    double base_ms = 2.0, per_row_ms = 1.0, swap_ms = 4.0;
    auto* bench = app.add_subcommand("bench", "simulate a trace under each serving mode");
    bench->add_option("--trace", trace_path, "trace file")->required();
    bench->add_option("--modes", modes_csv, "comma list of merged, swap, batched");
    bench->add_option("--max-batch", max_batch, "scheduler max batch");
    bench->add_option("--window-ms", window_ms, "scheduler window");
    bench->add_option("--base-ms", base_ms, "cost model per-batch base time");
    bench->add_option("--per-row-ms", per_row_ms, "cost model per-row time");
    bench->add_option("--swap-ms", swap_ms, "cost model per-swap time");

    std::string local_manifest, remote_manifest;
    auto* sync_plan = app.add_subcommand("sync-plan", "print adapters to fetch from a remote");
    sync_plan->add_option("local", local_manifest, "local manifest file")->required();
    sync_plan->add_option("remote", remote_manifest, "remote manifest file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors exit 2, --help exits 0
    }

    try {
        if (gen_model->parsed()) {
            return cmd_gen_model(model_path, out_path);
        }
        if (gen_adapter->parsed()) {
            return cmd_gen_adapter(seed, rank, alpha, placement_spec, shared_b, model_path, id,
                                   out_path);
        }
        if (merge->parsed()) {
            return cmd_merge(base_path, adapter_path, out_path, report_roundtrip);
        }
        if (serve->parsed()) {
            return cmd_serve(config_path);
        }
        if (bench->parsed()) {
            return cmd_bench(trace_path, modes_csv, max_batch, window_ms, base_ms, per_row_ms,
                             swap_ms);
        }
        if (sync_plan->parsed()) {
            return cmd_sync_plan(local_manifest, remote_manifest);
        }
    } catch (const multilora::Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
