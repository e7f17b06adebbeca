#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "repdit/analysis.hpp"
#include "repdit/capture.hpp"
#include "repdit/checkpoint.hpp"
#include "repdit/config.hpp"
#include "repdit/dataset.hpp"
#include "repdit/diffusion.hpp"
#include "repdit/model.hpp"
#include "repdit/optimizer.hpp"
#include "repdit/report.hpp"
#include "repdit/train.hpp"

namespace repdit {

// Orchestration behind the CLI subcommands. Every function returns the list
// of files it wrote; all outputs are deterministic functions of (config,
// seeds), so identical invocations produce identical bytes.

inline NoiseSchedule schedule_from(const RunConfig& cfg) {
    return make_schedule(cfg.schedule.steps, cfg.schedule.resolved_beta_start(),
                         cfg.schedule.resolved_beta_end());
}

inline std::vector<size_t> resolved_analysis_steps(const RunConfig& cfg) {
    if (!cfg.analysis.steps.empty()) return cfg.analysis.steps;
    const size_t T = cfg.schedule.steps;
    std::set<size_t, std::greater<size_t>> s{T, (3 * T + 3) / 4, (T + 1) / 2, (T + 3) / 4, 1};
    return {s.begin(), s.end()};
}

inline uint64_t model_init_seed(const RunConfig& cfg) {
    return Rng::derive(cfg.train.seed, Rng::hash_name("model_init"));
}

struct TrainedRun {
    RunConfig cfg;
    std::shared_ptr<RepDiT> model;
    std::vector<TrainLogRow> log;
};

// Full training pass: dataset, init (or resume), optimization, periodic and
// final checkpoints, loss log. out_dir is created if needed.
inline TrainedRun run_training(const RunConfig& cfg, const std::string& out_dir,
                               const std::optional<std::string>& resume,
                               std::vector<std::string>& written) {
    std::filesystem::create_directories(out_dir);
    NoiseSchedule schedule = schedule_from(cfg);
    std::vector<SyntheticClip> data = synth_dataset(cfg.data.seed, cfg.data.clips, cfg);
    auto model = std::make_shared<RepDiT>(cfg.model, model_init_seed(cfg));
    Adam opt(model->params(), cfg.train.lr);
    Trainer trainer(*model, opt, cfg, schedule, data);

    size_t start = 0;
    if (resume) {
        Checkpoint ckpt = checkpoint_load(*resume);
        if (ckpt.config.to_json() != cfg.to_json())
            fail("config_invalid",
                 "resume checkpoint was trained under a different configuration");
        start = restore_training_state(*model, opt, trainer.window(), ckpt);
    }

    auto save = [&](const std::string& name) {
        const std::string path = out_dir + "/" + name;
        checkpoint_save(path, cfg, training_state_entries(*model, opt, trainer.window()));
        written.push_back(path);
    };
    std::vector<TrainLogRow> log = trainer.run(start, cfg.train.steps, [&](size_t step) {
        save("ckpt_step_" + std::to_string(step) + ".rpvd");
    });
    save("ckpt_final.rpvd");

    Csv csv({"step", "loss", "smoothed"});
    for (const auto& row : log)
        csv.add_row({std::to_string(row.step), format_double(row.loss),
                     format_double(row.smoothed)});
    const std::string log_path = out_dir + "/loss_log.csv";
    write_text_file(log_path, csv.serialize());
    written.push_back(log_path);

    return {cfg, model, std::move(log)};
}

inline std::vector<std::string> cmd_train(const std::string& config_path,
                                          const std::string& out_dir,
                                          const std::optional<std::string>& resume = {}) {
    RunConfig cfg = RunConfig::load(config_path);
    std::vector<std::string> written;
    run_training(cfg, out_dir, resume, written);
    return written;
}

// Samples a clip from a checkpoint; optionally records features/attention at
// the configured analysis steps into an RPVA1 capture alongside the clip.
inline std::vector<std::string> cmd_sample(const std::string& ckpt_path, size_t prompt_id,
                                           uint64_t seed, const std::string& out_dir,
                                           bool want_capture = false) {
    Checkpoint ckpt = checkpoint_load(ckpt_path);
    const RunConfig& cfg = ckpt.config;
    if (prompt_id >= cfg.model.vocab)
        fail("bad_argument", "prompt id " + std::to_string(prompt_id) + " outside vocab " +
                                 std::to_string(cfg.model.vocab));
    std::filesystem::create_directories(out_dir);
    RepDiT model(cfg.model, model_init_seed(cfg));
    restore_params(model, ckpt);
    NoiseSchedule schedule = schedule_from(cfg);

    CaptureSink sink;
    sink.want_features = true;
    sink.want_mean = cfg.model.repvideo_enabled;
    sink.per_head = cfg.analysis.per_head;
    sink.similarity_hint = cfg.analysis.similarity;
    const std::vector<size_t> steps = resolved_analysis_steps(cfg);
    const size_t attention_step = steps[0];

    Denoiser denoiser = [&](const Tensor& x, size_t t) {
        if (want_capture) {
            sink.active = std::find(steps.begin(), steps.end(), t) != steps.end();
            sink.step = t;
            sink.want_attention = t == attention_step;
        }
        return model.forward(x, t, prompt_id, want_capture ? &sink : nullptr);
    };
    Tensor clip = sample_loop(denoiser, {cfg.model.F, cfg.model.G, cfg.model.G}, schedule, seed);

    std::vector<std::string> written;
    const std::string clip_path = out_dir + "/clip.rpvc";
    write_clip(clip_path, clip);
    written.push_back(clip_path);
    const std::string pgm_path = out_dir + "/frames.pgm";
    write_pgm_strip(pgm_path, clip);
    written.push_back(pgm_path);
    if (want_capture) {
        const std::string cap_path = out_dir + "/capture.rpva";
        write_capture(cap_path, sink);
        written.push_back(cap_path);
    }
    return written;
}

namespace detail {

inline bool file_starts_with(const std::string& path, const std::string& prefix) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io_error", "cannot open '" + path + "'");
    std::string head(prefix.size(), '\0');
    in.read(head.data(), std::streamsize(prefix.size()));
    return size_t(in.gcount()) == prefix.size() && head == prefix;
}

// all report files derived from one capture: similarity CSVs, attention CSV,
// line chart, attention-mass and feature-map heatmaps
inline std::vector<std::string> write_reports(const CaptureSink& cap, const std::string& out_dir,
                                              const std::vector<size_t>& steps,
                                              const std::vector<size_t>& layers,
                                              SimilarityMode mode) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    SimilarityReport rep = report_from_capture(cap, steps, layers, mode);

    Csv sim({"step", "layer", "frame_pair", "similarity"});
    for (const auto& r : rep.detail)
        sim.add_row({std::to_string(r.step), std::to_string(r.layer), std::to_string(r.pair),
                     format_double(r.sim)});
    written.push_back(out_dir + "/similarity.csv");
    write_text_file(written.back(), sim.serialize());

    if (!rep.detail_mean.empty()) {
        Csv agg({"step", "layer", "frame_pair", "similarity"});
        for (const auto& r : rep.detail_mean)
            agg.add_row({std::to_string(r.step), std::to_string(r.layer), std::to_string(r.pair),
                         format_double(r.sim)});
        written.push_back(out_dir + "/aggregated_similarity.csv");
        write_text_file(written.back(), agg.serialize());
    }

    std::vector<Series> series;
    for (size_t si = 0; si < rep.steps.size(); ++si) {
        Series s;
        s.name = "step " + std::to_string(rep.steps[si]);
        for (size_t li = 0; li < rep.layers.size(); ++li) {
            s.xs.push_back(double(rep.layers[li]));
            s.ys.push_back(rep.values[si][li]);
        }
        series.push_back(std::move(s));
    }
    written.push_back(out_dir + "/similarity_layers.svg");
    write_text_file(written.back(),
                    svg_line_chart("Adjacent-frame similarity by layer", "layer",
                                   "mean cosine similarity", series));

    if (!cap.attention.empty()) {
        const size_t F = cap.layout.F;
        std::vector<std::string> header{"step", "layer", "head", "query_frame", "text_mass"};
        for (size_t f = 0; f < F; ++f) header.push_back("mass_frame_" + std::to_string(f));
        Csv att(header);
        for (const auto& a : cap.attention) {
            for (size_t qf = 0; qf < F; ++qf) {
                auto masses = frame_attention_distribution(a.weights, cap.layout, qf);
                std::vector<std::string> row{
                    std::to_string(a.step), std::to_string(a.layer),
                    a.head == AttentionCaptureRecord::head_mean ? "mean" : std::to_string(a.head),
                    std::to_string(qf), format_double(masses[0])};
                for (size_t f = 0; f < F; ++f) row.push_back(format_double(masses[1 + f]));
                att.add_row(row);
            }
        }
        written.push_back(out_dir + "/attention.csv");
        write_text_file(written.back(), att.serialize());

        std::vector<std::string> cols{"text"};
        for (size_t f = 0; f < F; ++f) cols.push_back("frame " + std::to_string(f));
        for (const auto& a : cap.attention) {
            if (a.head != AttentionCaptureRecord::head_mean && a.head != 0) continue;
            std::vector<double> grid(F * (F + 1));
            std::vector<std::string> rows_labels;
            for (size_t qf = 0; qf < F; ++qf) {
                auto masses = frame_attention_distribution(a.weights, cap.layout, qf);
                for (size_t c = 0; c < F + 1; ++c) grid[qf * (F + 1) + c] = masses[c];
                rows_labels.push_back("query " + std::to_string(qf));
            }
            written.push_back(out_dir + "/attention_mass_layer" + std::to_string(a.layer) + ".svg");
            write_text_file(written.back(),
                            svg_heatmap("Attention mass, layer " + std::to_string(a.layer) +
                                            ", step " + std::to_string(a.step),
                                        grid, F, F + 1, rows_labels, cols));
        }
    }

    // per-layer feature maps of frame 0 at the first reported step
    auto emit_feature_maps = [&](const std::string& variant, const std::string& filename,
                                 const std::string& title) {
        const size_t P = cap.layout.P;
        std::vector<double> grid;
        std::vector<std::string> row_labels;
        for (size_t layer : rep.layers) {
            const FeatureRecord* f = find_features(cap, rep.steps[0], layer, variant);
            if (!f) return;
            auto map = export_feature_map(f->values, cap.layout, cap.width, 0);
            grid.insert(grid.end(), map.begin(), map.end());
            row_labels.push_back("layer " + std::to_string(layer));
        }
        if (grid.empty()) return;
        std::vector<std::string> col_labels;
        for (size_t p = 0; p < P; ++p) col_labels.push_back(std::to_string(p));
        written.push_back(out_dir + "/" + filename);
        write_text_file(written.back(),
                        svg_heatmap(title, grid, rep.layers.size(), P, row_labels, col_labels, 18));
    };
    emit_feature_maps("orig", "feature_maps.svg", "Feature-map norms, frame 0");
    emit_feature_maps("mean", "feature_maps_aggregated.svg",
                      "Aggregated feature-map norms, frame 0");
    return written;
}

} // namespace detail

// Analyze either an RPVA1 capture (pure recomputation) or an RPVD checkpoint
// (runs a capture sweep first, exporting analysis_capture.rpva, then reports
// from the exported bytes).
inline std::vector<std::string> cmd_analyze(const std::string& in_path, const std::string& out_dir,
                                            std::vector<size_t> steps = {},
                                            std::vector<size_t> layers = {}) {
    std::vector<std::string> written;
    CaptureSink cap;
    if (detail::file_starts_with(in_path, "RPVD")) {
        Checkpoint ckpt = checkpoint_load(in_path);
        const RunConfig& cfg = ckpt.config;
        RepDiT model(cfg.model, model_init_seed(cfg));
        restore_params(model, ckpt);
        NoiseSchedule schedule = schedule_from(cfg);
        if (steps.empty()) steps = resolved_analysis_steps(cfg);
        CaptureSink sink;
        sink.similarity_hint = cfg.analysis.similarity;
        sink.per_head = cfg.analysis.per_head;
        similarity_sweep(model, schedule, 0, Rng::derive(cfg.train.seed, Rng::hash_name("analyze")),
                         steps, layers.empty() ? cfg.analysis.layers : layers,
                         similarity_mode_from_string(cfg.analysis.similarity), &sink,
                         /*want_attention=*/true);
        std::filesystem::create_directories(out_dir);
        const std::string cap_path = out_dir + "/analysis_capture.rpva";
        write_capture(cap_path, sink);
        written.push_back(cap_path);
        cap = read_capture(cap_path);
    } else if (detail::file_starts_with(in_path, "RPVA1")) {
        cap = read_capture(in_path);
    } else {
        fail("capture_malformed", "'" + in_path + "' is neither an RPVD checkpoint nor an RPVA1 capture");
    }
    auto reports = detail::write_reports(cap, out_dir, steps, layers,
                                         similarity_mode_from_string(cap.similarity_hint));
    written.insert(written.end(), reports.begin(), reports.end());
    return written;
}

// Trains a baseline/enhanced pair per seed under identical data and
// initialization, sweeps both, and emits joint similarity/loss reports.
inline std::vector<std::string> cmd_compare(const std::string& config_path,
                                            const std::vector<uint64_t>& seeds,
                                            const std::string& out_dir) {
    if (seeds.empty()) fail("bad_argument", "compare needs at least one seed");
    RunConfig cfg = RunConfig::load(config_path);
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;

    const std::vector<size_t> steps = resolved_analysis_steps(cfg);
    std::vector<size_t> layers = cfg.analysis.layers;
    if (layers.empty())
        for (size_t l = 1; l <= cfg.model.L; ++l) layers.push_back(l);
    const SimilarityMode mode = similarity_mode_from_string(cfg.analysis.similarity);

    Csv cmp({"seed", "step", "layer", "baseline", "repvideo", "delta"});
    Csv losses({"seed", "model", "step", "loss", "smoothed"});
    Csv summary({"seed", "model", "final_loss", "final_smoothed"});
    // [layer index] -> accumulated mean similarity for the chart
    std::vector<double> acc_base(layers.size(), 0.0), acc_rep(layers.size(), 0.0);
    size_t acc_n = 0;

    for (uint64_t seed : seeds) {
        const std::string seed_dir = out_dir + "/seed_" + std::to_string(seed);
        auto one = [&](bool repvideo) {
            RunConfig c = cfg;
            c.model.repvideo_enabled = repvideo;
            c.train.seed = seed;
            const std::string sub = seed_dir + (repvideo ? "/repvideo" : "/baseline");
            TrainedRun run = run_training(c, sub, std::nullopt, written);
            CaptureSink sink;
            sink.similarity_hint = c.analysis.similarity;
            SimilarityReport rep = similarity_sweep(
                *run.model, schedule_from(c), 0, Rng::derive(seed, Rng::hash_name("compare_sample")),
                steps, layers, mode, &sink);
            const std::string cap_path = sub + "_capture.rpva";
            write_capture(cap_path, sink);
            written.push_back(cap_path);
            const char* name = repvideo ? "repvideo" : "baseline";
            for (const auto& row : run.log)
                losses.add_row({std::to_string(seed), name, std::to_string(row.step),
                                format_double(row.loss), format_double(row.smoothed)});
            if (!run.log.empty())
                summary.add_row({std::to_string(seed), name, format_double(run.log.back().loss),
                                 format_double(run.log.back().smoothed)});
            return rep;
        };
        SimilarityReport base = one(false);
        SimilarityReport rep = one(true);
        for (size_t si = 0; si < steps.size(); ++si) {
            for (size_t li = 0; li < layers.size(); ++li) {
                const double b = base.values[si][li];
                const double r = rep.values[si][li];
                cmp.add_row({std::to_string(seed), std::to_string(steps[si]),
                             std::to_string(layers[li]), format_double(b), format_double(r),
                             format_double(r - b)});
                acc_base[li] += b;
                acc_rep[li] += r;
            }
        }
        acc_n += steps.size();
    }

    written.push_back(out_dir + "/compare.csv");
    write_text_file(written.back(), cmp.serialize());
    written.push_back(out_dir + "/losses.csv");
    write_text_file(written.back(), losses.serialize());
    written.push_back(out_dir + "/summary.csv");
    write_text_file(written.back(), summary.serialize());

    Series sb{"baseline", {}, {}}, sr{"repvideo", {}, {}};
    for (size_t li = 0; li < layers.size(); ++li) {
        sb.xs.push_back(double(layers[li]));
        sb.ys.push_back(acc_base[li] / double(acc_n));
        sr.xs.push_back(double(layers[li]));
        sr.ys.push_back(acc_rep[li] / double(acc_n));
    }
    written.push_back(out_dir + "/compare.svg");
    write_text_file(written.back(),
                    svg_line_chart("Baseline vs RepVideo adjacent-frame similarity", "layer",
                                   "mean cosine similarity", {sb, sr}));
    return written;
}

} // namespace repdit
