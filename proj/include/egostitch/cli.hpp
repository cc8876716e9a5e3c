#pragma once

// Batch command-line front end. `run` is separate from `main` so tests can
// drive it in-process.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "egostitch/chunking.hpp"
#include "egostitch/dynamic_prior.hpp"
#include "egostitch/ingest.hpp"
#include "egostitch/metrics.hpp"
#include "egostitch/parallel.hpp"
#include "egostitch/pipeline.hpp"
#include "egostitch/stitcher.hpp"
#include "egostitch/synth.hpp"
#include "egostitch/token_gate.hpp"

namespace egostitch::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kDegenerate = 4 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return kConfig;
    case ErrorKind::InsufficientOverlap:
    case ErrorKind::DegenerateGeometry: return kDegenerate;
    default: return kData;
  }
}

/// JSON config files for CLI11. Nested objects address subcommands, so
/// {"threads": 2, "stitch": {"voxel": 0.05}} sets --threads and `stitch --voxel`.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::exception& e) {
      throw CLI::ConversionError(std::string("config file: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const Json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

inline void write_error(std::ostream& err, std::string_view kind, const std::string& message, int code) {
  err << Json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
}

inline SuppressionMode parse_mode(const std::string& s) {
  if (s == "dynamic-only") return SuppressionMode::DynamicOnly;
  if (s == "cumulative") return SuppressionMode::Cumulative;
  throw ConfigError("unknown suppression mode '" + s + "' (expected dynamic-only or cumulative)");
}

inline std::vector<EvalMaskKind> parse_eval(const std::string& s) {
  if (s == "dynamics") return {EvalMaskKind::Instantaneous};
  if (s == "fulltime") return {EvalMaskKind::Footprint};
  if (s == "both") return {EvalMaskKind::Instantaneous, EvalMaskKind::Footprint};
  throw ConfigError("unknown --eval '" + s + "' (expected dynamics, fulltime or both)");
}

/// "a,b" into two numbers.
inline std::pair<double, double> parse_pair(const std::string& s, const char* what) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError(std::string(what) + ": expected two comma-separated values");
  try {
    std::size_t p1 = 0, p2 = 0;
    const std::string a = s.substr(0, comma), b = s.substr(comma + 1);
    const double x = std::stod(a, &p1);
    const double y = std::stod(b, &p2);
    if (p1 != a.size() || p2 != b.size()) throw std::invalid_argument(what);
    return {x, y};
  } catch (const std::logic_error&) {
    throw ConfigError(std::string(what) + ": cannot parse '" + s + "'");
  }
}

inline std::optional<NearHandParams> parse_near_hand(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const auto [r, tau] = parse_pair(s, "--near-hand");
  if (r != std::floor(r)) throw ConfigError("--near-hand: radius must be an integer");
  NearHandParams p{static_cast<int>(r), tau};
  p.validate();
  return p;
}

inline GeomTransform make_transform(const std::string& policy, int h, int w, int out_h, int out_w) {
  if (policy == "stretch") return GeomTransform::stretch(h, w, out_h, out_w);
  if (policy == "fit-pad") return GeomTransform::fit_and_pad(h, w, out_h, out_w);
  if (policy == "fill-crop") return GeomTransform::fill_and_crop(h, w, out_h, out_w);
  throw ConfigError("unknown --policy '" + policy + "' (expected stretch, fit-pad or fill-crop)");
}

inline Json plan_to_json(const std::vector<ChunkPlan>& plans, int frames, int chunk, int overlap) {
  Json arr = Json::array();
  for (const auto& p : plans) {
    arr.push_back({{"chunk_id", p.chunk_id}, {"start", p.start}, {"end", p.end}, {"overlap_end", p.overlap_end}});
  }
  return {{"frames", frames}, {"chunk", chunk}, {"overlap", overlap}, {"num_chunks", plans.size()}, {"chunks", arr}};
}

/// Markdown comparison table, one row per (variant, evaluation mask).
inline std::string report_table(const std::vector<MetricReport>& reports) {
  const auto& cols = metric_csv_columns();
  std::string out = "| " + fmt::format("{}", fmt::join(cols, " | ")) + " |\n|";
  for (std::size_t i = 0; i < cols.size(); ++i) out += "---|";
  out += '\n';
  for (const auto& r : reports) {
    for (const auto& row : metric_csv_rows(r)) out += "| " + fmt::format("{}", fmt::join(row, " | ")) + " |\n";
  }
  return out;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Chunked reconstruction stitching, dynamic priors and evaluation metrics"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file of option defaults; command-line flags win");
  app.require_subcommand(1);
  std::size_t threads = 0;
  std::string out_dir = ".";
  app.add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");
  app.add_option("--out", out_dir, "Output directory; every artifact path is relative to it");

  // plan
  auto* plan = app.add_subcommand("plan", "Chunk plan for T frames");
  int frames = 0, chunk = 0, overlap = -1;
  plan->add_option("--frames", frames, "Frame count T")->required();
  plan->add_option("--chunk", chunk, "Chunk length K")->required();
  plan->add_option("--overlap", overlap, "Overlap O")->required();

  // mask
  auto* mask = app.add_subcommand("mask", "Suppression masks D_t from the track index");
  std::string manifest_path, mode = "cumulative", near_hand, mask_dir = "masks";
  bool with_footprint = false;
  mask->add_option("--manifest", manifest_path, "Sequence manifest")->required();
  mask->add_option("--mode", mode, "dynamic-only or cumulative");
  mask->add_option("--near-hand", near_hand, "Near-hand filter as r,tau");
  mask->add_option("--dir", mask_dir, "Subdirectory for the mask series");
  mask->add_flag("--footprint", with_footprint, "Also write the running footprint series");

  // tokenmask
  auto* tok = app.add_subcommand("tokenmask", "Token-grid masks and attention-bias sidecars");
  std::string tok_masks, input_size, policy = "stretch", tok_dir = "tokens";
  int patch = 14;
  bool write_bias = false;
  tok->add_option("--masks", tok_masks, "Directory of binary PGM masks")->required();
  tok->add_option("--input-size", input_size, "Tokenizer input as H,W")->required();
  tok->add_option("--patch", patch, "Patch size P");
  tok->add_option("--policy", policy, "stretch, fit-pad or fill-crop");
  tok->add_option("--dir", tok_dir, "Subdirectory for token masks");
  tok->add_flag("--bias", write_bias, "Also write the per-key bias vector");

  // stitch
  auto* st = app.add_subcommand("stitch", "Stitch chunks, write transforms, trajectory and fused cloud");
  double voxel = 0.0;
  std::string suppress;
  st->add_option("--manifest", manifest_path, "Sequence manifest")->required();
  st->add_option("--voxel", voxel, "Voxel size for fusion (0 disables subsampling)");
  st->add_option("--suppress", suppress, "Leave out pixels under dynamic-only or cumulative masks");
  st->add_option("--near-hand", near_hand, "Near-hand filter as r,tau for --suppress");

  // metrics
  auto* me = app.add_subcommand("metrics", "Evaluation metric report");
  std::string eval = "both", variant = "default";
  std::size_t max_points = 20000;
  bool no_rho = false;
  me->add_option("--manifest", manifest_path, "Sequence manifest")->required();
  me->add_option("--eval", eval, "dynamics, fulltime or both");
  me->add_option("--variant", variant, "Row label in reports");
  me->add_option("--suppress", suppress, "Remove dynamic-only or cumulative mask pixels from evaluated clouds");
  me->add_option("--near-hand", near_hand, "Near-hand filter as r,tau for --suppress");
  me->add_option("--voxel", voxel, "Voxel size for chunk clouds");
  me->add_option("--max-points", max_points, "Per-frame point cap for overlap geometry");
  me->add_flag("--no-rho", no_rho, "Skip the auxiliary multi-surface ratio");

  // synth
  auto* sy = app.add_subcommand("synth", "Write a synthetic dataset with ground truth");
  std::string synth_config;
  std::optional<std::uint64_t> seed;
  std::optional<int> s_frames, s_chunk, s_overlap;
  std::optional<double> s_noise;
  sy->add_option("--config", synth_config, "Synthetic scene configuration (JSON)");
  sy->add_option("--seed", seed, "Override the seed");
  sy->add_option("--frames", s_frames, "Override the frame count");
  sy->add_option("--chunk", s_chunk, "Override the chunk length");
  sy->add_option("--overlap", s_overlap, "Override the overlap");
  sy->add_option("--noise", s_noise, "Override the depth noise");

  // report
  auto* rep = app.add_subcommand("report", "Comparison table across metric reports");
  std::vector<std::string> inputs;
  rep->add_option("--inputs", inputs, "Metric report JSON files, one per variant")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    write_error(err, "ConfigError", e.what(), kConfig);
    return kConfig;
  }

  try {
    set_thread_count(threads);
    const fs::path base(out_dir);

    if (*plan) {
      const auto plans = plan_chunks(frames, chunk, overlap);
      const Json j = plan_to_json(plans, frames, chunk, overlap);
      save_json_file(j, base / "plan.json");
      out << j.dump(2) << '\n';
    } else if (*mask) {
      const auto filter = parse_near_hand(near_hand);
      const SuppressionMode m_mode = parse_mode(mode);
      const SequenceManifest m = load_manifest(manifest_path);
      const auto masks = manifest_suppression_masks(m, m_mode, filter);
      for (std::size_t t = 0; t < masks.size(); ++t) {
        save_mask(masks[t], base / mask_dir / mask_file_name(static_cast<int>(t)));
      }
      if (with_footprint) {
        const auto foot = footprint_series(masks);
        for (std::size_t t = 0; t < foot.size(); ++t) {
          save_mask(foot[t], base / (mask_dir + "_footprint") / mask_file_name(static_cast<int>(t)));
        }
      }
      out << Json{{"frames", masks.size()}, {"dir", (base / mask_dir).string()}}.dump() << '\n';
    } else if (*tok) {
      const auto [h, w] = parse_pair(input_size, "--input-size");
      if (h < 1 || w < 1 || h != std::floor(h) || w != std::floor(w)) {
        throw ConfigError("--input-size: expected positive integers");
      }
      if (patch < 1) throw ConfigError("--patch must be >= 1");
      std::vector<fs::path> files;
      if (!fs::is_directory(tok_masks)) throw ConfigError("--masks: not a directory: " + tok_masks);
      for (const auto& e : fs::directory_iterator(tok_masks)) {
        if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      std::vector<BinaryMask> masks(files.size());
      parallel_for(files.size(), [&](std::size_t i) { masks[i] = load_mask(files[i]); });
      for (std::size_t i = 0; i < files.size(); ++i) {
        const GeomTransform tf = make_transform(policy, masks[i].height(), masks[i].width(), static_cast<int>(h), static_cast<int>(w));
        const TokenMask tm = pool_to_tokens(transfer_mask(masks[i], tf), patch);
        const std::string stem = files[i].stem().string();
        save_mask(tm.grid, base / tok_dir / (stem + ".pgm"));
        save_json_file(token_sidecar(tm), base / tok_dir / (stem + ".json"));
        if (write_bias) write_file_bytes(base / tok_dir / (stem + ".bias"), encode_bias(attention_bias(tm)));
      }
      out << Json{{"masks", files.size()}, {"dir", (base / tok_dir).string()}}.dump() << '\n';
    } else if (*st) {
      const auto filter = parse_near_hand(near_hand);
      std::optional<SuppressionMode> s_mode;
      if (!suppress.empty()) s_mode = parse_mode(suppress);
      const SequenceManifest m = load_manifest(manifest_path);
      const auto chunks = load_chunk_trajectories(m);
      const StitchResult result = stitch_manifest(m, chunks);
      std::optional<std::vector<BinaryMask>> masks;
      if (s_mode) masks = manifest_suppression_masks(m, *s_mode, filter);
      const PointCloud cloud = fused_cloud(m, chunks, result, voxel, masks ? &*masks : nullptr);
      save_json_file(stitch_result_to_json(result), base / "stitch.json");
      save_poses(global_trajectory(result), base / "trajectory.jsonl");
      save_pointcloud(cloud, base / "fused.ply");
      for (const auto& t : result.transitions) {
        if (t.fallback) err << Json{{"warning", t.warning}, {"from", t.from_chunk}, {"to", t.to_chunk}}.dump() << '\n';
      }
      out << Json{{"chunks", result.chunk_transforms.size()}, {"points", cloud.size()}}.dump() << '\n';
    } else if (*me) {
      MetricOptions opt;
      opt.variant = variant;
      opt.evals = parse_eval(eval);
      opt.voxel = voxel;
      opt.max_points_per_frame = max_points;
      opt.compute_rho = !no_rho;
      opt.near_hand = parse_near_hand(near_hand);
      if (!suppress.empty()) opt.suppress = parse_mode(suppress);
      const SequenceManifest m = load_manifest(manifest_path);
      const MetricReport r = evaluate(m, opt);
      save_json_file(metric_report_to_json(r), base / "metrics.json");
      write_file_bytes(base / "metrics.csv", metric_report_csv(r));
      out << metric_report_csv(r);
    } else if (*sy) {
      SynthConfig cfg = synth_config.empty() ? SynthConfig{} : synth_config_from_json(load_json_file(synth_config));
      if (seed) cfg.seed = *seed;
      if (s_frames) cfg.frames = *s_frames;
      if (s_chunk) cfg.chunk = *s_chunk;
      if (s_overlap) cfg.overlap = *s_overlap;
      if (s_noise) cfg.depth_noise = *s_noise;
      const SynthSequence seq = generate(cfg);
      write_synth(seq, base);
      out << Json{{"frames", cfg.frames}, {"chunks", seq.plans.size()}, {"manifest", (base / "manifest.json").string()}}.dump()
          << '\n';
    } else if (*rep) {
      std::vector<MetricReport> reports;
      for (const auto& p : inputs) reports.push_back(metric_report_from_json(load_json_file(p)));
      std::string csv = join_csv(metric_csv_columns()) + '\n';
      for (const auto& r : reports) {
        for (const auto& row : metric_csv_rows(r)) csv += join_csv(row) + '\n';
      }
      write_file_bytes(base / "report.csv", csv);
      const std::string table = report_table(reports);
      write_file_bytes(base / "report.md", table);
      out << table;
    }
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    write_error(err, to_string(e.kind()), e.what(), code);
    return code;
  } catch (const fs::filesystem_error& e) {
    write_error(err, "IoError", e.what(), kData);
    return kData;
  } catch (const std::exception& e) {
    write_error(err, "InternalError", e.what(), kInternal);
    return kInternal;
  }
  return kOk;
}

}  // namespace egostitch::cli
