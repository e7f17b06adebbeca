// repdit: train, sample, analyze, and compare desk-scale video diffusion
// transformers with cross-layer feature aggregation.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "repdit/commands.hpp"
#include "repdit/error.hpp"

namespace {

std::vector<uint64_t> parse_u64_list(const std::string& text) {
    std::vector<uint64_t> out;
    size_t pos = 0;
    while (pos <= text.size()) {
        const size_t comma = text.find(',', pos);
        const std::string piece =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (piece.empty()) repdit::fail("bad_argument", "empty entry in list '" + text + "'");
        try {
            out.push_back(std::stoull(piece));
        } catch (const std::exception&) {
            repdit::fail("bad_argument", "'" + piece + "' is not an unsigned integer");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::vector<size_t> parse_index_list(const std::string& text) {
    std::vector<size_t> out;
    for (uint64_t v : parse_u64_list(text)) out.push_back(size_t(v));
    return out;
}

void report_written(const std::vector<std::string>& paths) {
    for (const auto& p : paths) std::cout << "wrote " << p << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale diffusion transformer laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", ckpt_path, resume_path, in_path;
    std::string steps_arg, layers_arg, seeds_arg;
    uint64_t seed = 0;
    size_t prompt_id = 0;
    bool want_capture = false;

    CLI::App* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "run configuration (JSON)")->required();
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    CLI::App* sample = app.add_subcommand("sample", "sample a clip from a checkpoint");
    sample->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    sample->add_option("--prompt", prompt_id, "prompt id")->required();
    sample->add_option("--seed", seed, "sampling seed")->required();
    sample->add_option("--out", out_dir, "output directory");
    sample->add_flag("--capture", want_capture, "record features/attention during sampling");

    CLI::App* analyze = app.add_subcommand("analyze", "emit reports from a capture or checkpoint");
    analyze->add_option("--in", in_path, "RPVA1 capture or RPVD checkpoint")->required();
    analyze->add_option("--steps", steps_arg, "denoising steps, comma separated");
    analyze->add_option("--layers", layers_arg, "layers, comma separated");
    analyze->add_option("--out", out_dir, "output directory");

    CLI::App* compare = app.add_subcommand("compare", "train and compare baseline vs enhanced");
    compare->add_option("--config", config_path, "run configuration (JSON)")->required();
    compare->add_option("--seeds", seeds_arg, "training seeds, comma separated")->required();
    compare->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            std::optional<std::string> resume;
            if (!resume_path.empty()) resume = resume_path;
            report_written(repdit::cmd_train(config_path, out_dir, resume));
        } else if (sample->parsed()) {
            report_written(repdit::cmd_sample(ckpt_path, prompt_id, seed, out_dir, want_capture));
        } else if (analyze->parsed()) {
            std::vector<size_t> steps, layers;
            if (!steps_arg.empty()) steps = parse_index_list(steps_arg);
            if (!layers_arg.empty()) layers = parse_index_list(layers_arg);
            report_written(repdit::cmd_analyze(in_path, out_dir, steps, layers));
        } else if (compare->parsed()) {
            report_written(repdit::cmd_compare(config_path, parse_u64_list(seeds_arg), out_dir));
        }
    } catch (const repdit::Error& e) {
        std::cerr << "error:" << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error:internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
