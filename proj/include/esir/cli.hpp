#pragma once

// Command-line front end. tools/main.cpp only forwards to run_cli so tests
// can drive the same code in-process.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "esir/eval.hpp"
#include "esir/gail.hpp"
#include "esir/scout.hpp"
#include "esir/service.hpp"
#include "esir/study.hpp"
#include "esir/synth.hpp"

namespace esir {

namespace cli {

enum ExitCode { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

// Input that failed validation; maps to exit code 2.
class ValidationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  bool json = false;
  std::uint64_t seed = 0;
  std::string pools, manifest, models, out, out_dir;

  // validate
  std::vector<std::string> clip_files;
  // synth
  std::string spec;
  std::optional<double> alpha;
  std::optional<std::size_t> train_per_profile, test_per_profile;
  bool transitions = false;
  std::size_t raters = 5, rater_clips = kDefaultSessionSize;
  std::uint64_t study_seed = 0;
  // train
  std::string pro, mode, branch_mode, gail_config, encoder_config;
  std::optional<std::size_t> epochs, batch, d_steps;
  // score / rank / heatmap
  std::string reference, calibrate_out, target, clip;
  std::size_t top = 0;
  // eval / study-report
  std::string ratings, fit_reports, truth, consensus = "leave_one_out", model_name = kDefaultModelRater;
  // serve
  std::string data_dir, ui_dir, media_root, host = "127.0.0.1";
  std::vector<std::string> anchors;
  int port = 8080;
  std::size_t session_size = kDefaultSessionSize;
};

inline ValuePools pools_from_option(const std::string& path) {
  if (path.empty()) return default_pools();
  try {
    return load_pools(read_text_file(path));
  } catch (const SchemaError& e) {
    throw ValidationFailure(path + ": " + e.what());
  }
}

inline std::string describe(const SchemaError& e) {
  std::string s;
  for (const auto& v : e.violations()) s += (s.empty() ? "" : "; ") + (v.path.empty() ? "" : v.path + ": ") + v.message;
  return s.empty() ? e.what() : s;
}

inline CorpusManifest manifest_from_option(const std::string& path, const ValuePools& pools) {
  if (path.empty()) throw ValidationFailure("--manifest is required");
  CorpusManifest m;
  try {
    m = load_manifest(path);
  } catch (const SchemaError& e) {
    throw ValidationFailure(path + ": " + describe(e));
  }
  if (!m.pools_version.empty() && m.pools_version != pools.version)
    throw ValidationFailure(path + ": manifest pools_version '" + m.pools_version + "' does not match pools '" +
                            pools.version + "'");
  return m;
}

// All clips or a ValidationFailure naming each bad one.
inline IngestResult load_corpus(const std::string& manifest_path, const ValuePools& pools) {
  IngestResult r;
  try {
    r = ingest_corpus(manifest_from_option(manifest_path, pools), pools);
  } catch (const SchemaError& e) {
    throw ValidationFailure(manifest_path + ": " + describe(e));
  }
  if (!r.report.empty()) {
    std::string msg = std::to_string(r.report.size()) + " invalid clip(s) in " + manifest_path + ":";
    for (const auto& e : r.report) msg += "\n  " + e.clip_id + ": " + e.message;
    throw ValidationFailure(msg);
  }
  return r;
}

inline Registry registry_from_option(const std::string& dir, const ValuePools& pools) {
  if (dir.empty()) throw ValidationFailure("--models is required");
  Registry reg = Registry::load_directory(dir);
  if (reg.size() == 0) throw ValidationFailure("no *" + std::string(kModelExtension) + " files in " + dir);
  for (const auto* m : reg.models())
    if (m->pools_version != pools.version)
      throw ValidationFailure("model '" + m->professional + "' was trained on pools '" + m->pools_version +
                              "' but the clips use '" + pools.version + "'");
  return reg;
}

inline void write_config(const fs::path& path, const std::string& command, nlohmann::json resolved) {
  resolved["command"] = command;
  write_text_file(path, resolved.dump(2) + "\n");
}

inline void emit(std::ostream& out, const fs::path& path, const std::string& text) {
  if (path.empty()) {
    out << text;
  } else {
    write_text_file(path, text);
  }
}

inline fs::path sibling(const fs::path& file, const std::string& name) {
  return file.has_parent_path() ? file.parent_path() / name : fs::path(name);
}

// ---------------------------------------------------------------------------

inline int cmd_validate(const Options& o, std::ostream& out) {
  const ValuePools pools = pools_from_option(o.pools);
  std::vector<IngestReportEntry> bad;
  std::vector<std::string> good;
  if (!o.manifest.empty()) {
    IngestResult r;
    try {
      r = ingest_corpus(manifest_from_option(o.manifest, pools), pools);
    } catch (const SchemaError& e) {
      throw ValidationFailure(o.manifest + ": " + describe(e));
    }
    for (const auto& c : r.clips) good.push_back(c.clip_id);
    bad = r.report;
  }
  for (const auto& f : o.clip_files) {
    try {
      parse_clip(read_text_file(f), pools);
      good.push_back(f);
    } catch (const SchemaError& e) {
      bad.push_back({f, describe(e)});
    } catch (const std::exception& e) {
      bad.push_back({f, e.what()});
    }
  }
  if (o.manifest.empty() && o.clip_files.empty()) throw ValidationFailure("validate needs --manifest or --clip");
  if (o.json) {
    nlohmann::json inv = nlohmann::json::array();
    for (const auto& b : bad) inv.push_back({{"clip_id", b.clip_id}, {"message", b.message}});
    out << nlohmann::json{{"valid", good.size()}, {"invalid", inv}, {"pools_version", pools.version}}.dump(2) << "\n";
  } else {
    for (const auto& b : bad) out << "INVALID " << b.clip_id << ": " << b.message << "\n";
    out << good.size() << " valid, " << bad.size() << " invalid\n";
  }
  return bad.empty() ? kOk : kValidation;
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  if (o.out_dir.empty()) throw ValidationFailure("--out-dir is required");
  SynthSpec spec;
  if (!o.spec.empty()) spec = synth_spec_from_json(nlohmann::json::parse(read_text_file(o.spec)));
  if (!o.pools.empty()) spec.pools = pools_from_option(o.pools);
  spec.seed = o.seed;
  if (o.alpha) spec.alpha = *o.alpha;
  if (o.train_per_profile) spec.train_per_profile = *o.train_per_profile;
  if (o.test_per_profile) spec.test_per_profile = *o.test_per_profile;
  if (o.transitions) spec.transitions = true;
  spec.validate();
  const fs::path dir = o.out_dir;
  SynthCorpus corpus = sample_corpus(spec);
  write_corpus(corpus, dir);
  RaterSimSpec rs;
  rs.n_raters = o.raters;
  rs.session_size = std::min(o.rater_clips, corpus.test.size());
  rs.study_seed = o.study_seed;
  if (o.raters > 0) write_text_file(dir / "ratings.csv", ratings_csv(simulate_ratings(corpus, rs, spec.seed)));
  write_config(dir / "synth.config.json", "synth", {{"spec", to_json(spec)}, {"raters", to_json(rs)}});
  const double oracle = oracle_accuracy(corpus);
  if (o.json) {
    out << nlohmann::json{{"out_dir", dir.string()},
                          {"train_clips", spec.train_per_profile * spec.profile_names.size()},
                          {"test_clips", corpus.test.size()},
                          {"oracle_accuracy", oracle}}
               .dump(2)
        << "\n";
  } else {
    out << "wrote " << corpus.test.size() << " test and " << spec.train_per_profile * spec.profile_names.size()
        << " training clips to " << dir.string() << "\n";
    out << "maximum-likelihood oracle accuracy: " << format_fixed(oracle, 3) << "\n";
  }
  return kOk;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  if (o.pro.empty()) throw ValidationFailure("--pro is required");
  if (o.out_dir.empty()) throw ValidationFailure("--out-dir is required");
  const ValuePools pools = pools_from_option(o.pools);
  IngestResult corpus = load_corpus(o.manifest, pools);
  std::vector<Clip> expert, negatives;
  for (const auto& c : corpus.clips) {
    if (!c.archetype_label) continue;
    (*c.archetype_label == o.pro ? expert : negatives).push_back(c);
  }
  if (expert.size() < 2)
    throw ValidationFailure("need at least 2 clips labeled '" + o.pro + "' in " + o.manifest + ", found " +
                            std::to_string(expert.size()));
  GailConfig gc = o.gail_config.empty() ? GailConfig{} : gail_config_from_json(nlohmann::json::parse(read_text_file(o.gail_config)));
  EncoderConfig ec = o.encoder_config.empty() ? EncoderConfig{}
                                              : encoder_config_from_json(nlohmann::json::parse(read_text_file(o.encoder_config)));
  if (!o.mode.empty()) gc.mode = gail_mode_from_string(o.mode);
  if (o.epochs) gc.epochs = *o.epochs;
  if (o.batch) gc.batch = *o.batch;
  if (o.d_steps) gc.d_steps = *o.d_steps;
  if (!o.branch_mode.empty()) ec.branch_mode = branch_mode_from_string(o.branch_mode);
  gc.validate();
  ec.validate();
  TrainResult r = train_style_model(o.pro, expert, negatives, pools, gc, ec, o.seed);
  const fs::path dir = o.out_dir;
  write_text_file(model_path(dir, o.pro), serialize_style_model(r.model));
  write_text_file(dir / (o.pro + ".train_log.jsonl"), train_log_jsonl(r.log));
  write_config(dir / (o.pro + ".config.json"), "train",
               {{"pro", o.pro},
                {"seed", o.seed},
                {"manifest", o.manifest},
                {"pools_version", pools.version},
                {"expert_clips", expert.size()},
                {"negative_clips", negatives.size()},
                {"gail", to_json(gc)},
                {"encoder", to_json(ec)}});
  const auto& last = r.log.back();
  if (o.json) {
    out << nlohmann::json{{"model", model_path(dir, o.pro).string()}, {"final", to_json(last)}}.dump(2) << "\n";
  } else {
    out << "trained '" << o.pro << "' on " << expert.size() << " clips (" << negatives.size() << " negatives), "
        << gc.epochs << " epochs; held-out AUC " << format_fixed(last.holdout_auc, 3) << "\n";
    out << "wrote " << model_path(dir, o.pro).string() << "\n";
  }
  return kOk;
}

inline std::map<std::string, NormalizationReference> load_references(const std::string& path) {
  std::map<std::string, NormalizationReference> refs;
  auto j = nlohmann::json::parse(read_text_file(path));
  for (const auto& [pro, v] : j.items()) refs[pro] = {v.at("min").get<double>(), v.at("max").get<double>()};
  return refs;
}

inline int cmd_score(const Options& o, std::ostream& out) {
  const ValuePools pools = pools_from_option(o.pools);
  Registry reg = registry_from_option(o.models, pools);
  IngestResult corpus = load_corpus(o.manifest, pools);
  std::optional<std::map<std::string, NormalizationReference>> refs;
  if (!o.reference.empty()) refs = load_references(o.reference);
  auto reports = score_clips(reg.models(), corpus.clips, refs ? &*refs : nullptr);
  if (!o.calibrate_out.empty()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& name : reg.names()) {
      std::vector<double> raw;
      for (const auto& r : reports) raw.push_back(r.raw.at(name));
      auto ref = NormalizationReference::from_batch(raw);
      j[name] = {{"min", ref.min}, {"max", ref.max}};
    }
    write_text_file(o.calibrate_out, j.dump(2) + "\n");
  }
  std::string text;
  if (o.json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    text = arr.dump(2) + "\n";
  } else {
    text = fit_reports_csv(reports);
  }
  emit(out, o.out, text);
  if (!o.out.empty())
    write_config(sibling(o.out, "score.config.json"), "score",
                 {{"models", o.models}, {"manifest", o.manifest}, {"pools_version", pools.version},
                  {"professionals", reg.names()}, {"reference", o.reference}, {"clips", reports.size()}});
  return kOk;
}

inline int cmd_rank(const Options& o, std::ostream& out) {
  if (o.target.empty()) throw ValidationFailure("--target is required");
  const ValuePools pools = pools_from_option(o.pools);
  Registry reg = registry_from_option(o.models, pools);
  if (!reg.contains(o.target)) throw ValidationFailure("unknown target '" + o.target + "'");
  IngestResult corpus = load_corpus(o.manifest, pools);
  auto reports = rank_candidates(reg.models(), corpus.clips, o.target);
  if (o.top && reports.size() > o.top) reports.resize(o.top);
  std::string text;
  if (o.json) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < reports.size(); ++i) {
      auto j = to_json(reports[i]);
      j["rank"] = i + 1;
      arr.push_back(j);
    }
    text = arr.dump(2) + "\n";
  } else {
    text = csv_row({"rank", "clip_id", "raw_score", "norm_score", "predicted"});
    for (std::size_t i = 0; i < reports.size(); ++i)
      text += csv_row({std::to_string(i + 1), reports[i].clip_id, format_double(reports[i].raw.at(o.target)),
                       format_double(reports[i].normalized.at(o.target)), reports[i].predicted.value_or("")});
  }
  emit(out, o.out, text);
  if (!o.out.empty())
    write_config(sibling(o.out, "rank.config.json"), "rank",
                 {{"models", o.models}, {"manifest", o.manifest}, {"target", o.target}, {"top", o.top}});
  return kOk;
}

inline int cmd_heatmap(const Options& o, std::ostream& out) {
  if (o.clip.empty()) throw ValidationFailure("--clip is required");
  const ValuePools pools = pools_from_option(o.pools);
  Registry reg = registry_from_option(o.models, pools);
  CorpusManifest m = manifest_from_option(o.manifest, pools);
  const ManifestEntry* e = m.find(o.clip);
  if (!e) throw ValidationFailure("clip '" + o.clip + "' is not in " + o.manifest);
  Clip clip;
  try {
    clip = load_clip(m, *e, pools);
  } catch (const SchemaError& err) {
    throw ValidationFailure(o.clip + ": " + describe(err));
  }
  std::string pro = o.pro;
  if (pro.empty()) {
    if (reg.size() < 2) {
      pro = reg.names().front();
    } else {
      auto p = identify(reg.models(), clip);
      if (!p) throw ValidationFailure("models tie on '" + o.clip + "'; pass --pro");
      pro = *p;
    }
  }
  if (!reg.contains(pro)) throw ValidationFailure("unknown professional '" + pro + "'");
  auto rows = temporal_heatmap(reg.get(pro), clip);
  std::string text;
  if (o.json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows)
      arr.push_back({{"t", r.t}, {"timestamp_s", r.timestamp}, {"reward", r.reward}, {"reward_norm", r.reward_norm}});
    text = nlohmann::json{{"clip_id", o.clip}, {"pro", pro}, {"rows", arr}}.dump(2) + "\n";
  } else {
    text = heatmap_csv(o.clip, rows);
  }
  emit(out, o.out, text);
  if (!o.out.empty())
    write_config(sibling(o.out, "heatmap.config.json"), "heatmap",
                 {{"models", o.models}, {"manifest", o.manifest}, {"clip", o.clip}, {"pro", pro}});
  return kOk;
}

struct StudyInputs {
  RatingMatrix humans;
  std::vector<FitReport> reports;
  std::map<std::string, std::string> truth;
};

inline StudyInputs load_study_inputs(const Options& o) {
  if (o.ratings.empty() || o.fit_reports.empty() || o.truth.empty())
    throw ValidationFailure("--ratings, --fit-reports and --truth are required");
  StudyInputs in;
  try {
    const std::string text = read_text_file(o.ratings);
    auto rows = o.ratings.ends_with(".jsonl") ? parse_ratings_jsonl(text) : parse_ratings_csv(text);
    in.humans = rating_matrix_from_rows(rows);
    in.reports = parse_fit_reports_csv(read_text_file(o.fit_reports));
    in.truth = parse_truth_csv(read_text_file(o.truth));
  } catch (const std::invalid_argument& e) {
    throw ValidationFailure(e.what());
  }
  return in;
}

inline std::string summary_table(const EvalSummary& s) {
  std::ostringstream t;
  t << "rater            pearson_r  spearman_rho  mae_z   accuracy\n";
  for (const auto& r : s.rows) {
    std::string name = r.rater;
    name.resize(std::max<std::size_t>(name.size(), 16), ' ');
    auto cell = [](const std::optional<double>& v, std::size_t w) {
      std::string c = fmt3(v);
      c.resize(std::max(c.size(), w), ' ');
      return c;
    };
    t << name << " " << cell(r.pearson_r, 10) << " " << cell(r.spearman_rho, 13) << " " << cell(r.mae_z, 7) << " "
      << fmt3(r.accuracy) << "\n";
  }
  for (const auto& b : s.icc) {
    t << "ICC (" << b.scope << ", " << b.n_raters << " raters x " << b.n_items << " items): ";
    if (b.icc) {
      t << "single " << format_fixed(b.icc->single, 3) << ", average " << format_fixed(b.icc->average, 3) << "\n";
    } else {
      t << "NA (" << b.note << ")\n";
    }
  }
  for (const auto& w : s.warnings) t << "warning: " << w << "\n";
  return t.str();
}

inline int cmd_eval(const Options& o, std::ostream& out, bool full_report) {
  StudyInputs in = load_study_inputs(o);
  const ConsensusMode mode = consensus_mode_from_string(o.consensus);
  EvalSummary s = evaluate_study(in.humans, in.reports, in.truth, mode, o.model_name);
  if (!o.out_dir.empty()) {
    const fs::path dir = o.out_dir;
    write_text_file(dir / "summary.csv", eval_summary_csv(s));
    if (full_report) {
      auto grids = agreement_matrices(with_model_rater(in.humans, in.reports, o.model_name), in.truth, &in.reports,
                                      o.model_name);
      write_text_file(dir / "similarity.csv", similarity_csv(grids));
      write_text_file(dir / "correctness.csv", correctness_csv(grids));
    }
    const std::string cmd = full_report ? "study-report" : "eval";
    write_config(dir / (cmd + ".config.json"), cmd,
                 {{"ratings", o.ratings}, {"fit_reports", o.fit_reports}, {"truth", o.truth},
                  {"consensus", to_string(mode)}, {"model_name", o.model_name}});
  }
  if (o.json) {
    out << to_json(s).dump(2) << "\n";
  } else if (full_report) {
    out << summary_table(s);
  } else {
    out << eval_summary_csv(s);
  }
  return kOk;
}

inline int cmd_serve(const Options& o, std::ostream& out) {
  const ValuePools pools = pools_from_option(o.pools);
  IngestResult corpus = load_corpus(o.manifest, pools);
  std::vector<std::string> anchors = o.anchors;
  if (anchors.empty() && !o.models.empty()) anchors = registry_from_option(o.models, pools).names();
  if (anchors.empty()) throw ValidationFailure("serve needs --anchors or --models");
  StudyConfig sc;
  sc.seed = o.seed;
  sc.session_size = o.session_size;
  sc.anchors = anchors;
  std::map<std::string, std::string> media;
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    sc.pool.push_back(corpus.clips[i].clip_id);
    if (corpus.media_urls[i]) media[corpus.clips[i].clip_id] = *corpus.media_urls[i];
  }
  std::sort(sc.pool.begin(), sc.pool.end());
  ServiceConfig cfg;
  cfg.host = o.host;
  cfg.port = o.port;
  if (!o.ui_dir.empty()) cfg.ui_dir = o.ui_dir;
  if (!o.media_root.empty()) cfg.media_root = o.media_root;
  std::optional<fs::path> data;
  if (!o.data_dir.empty()) {
    data = o.data_dir;
    write_config(*data / "serve.config.json", "serve",
                 {{"manifest", o.manifest}, {"seed", o.seed}, {"session_size", o.session_size}, {"anchors", anchors},
                  {"host", o.host}, {"port", o.port}});
  }
  Study study(sc, data);
  RatingService svc(study, corpus.clips, media, cfg);
  out << "serving " << sc.pool.size() << " clips on http://" << o.host << ":" << o.port << "\n" << std::flush;
  if (!svc.listen()) throw std::runtime_error("could not listen on " + o.host + ":" + std::to_string(o.port));
  return kOk;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli;
  Options o;
  CLI::App app{"Style-reward scouting: train per-player style models, score and rank clips, run rating studies."};
  app.name("esir");
  app.require_subcommand(1);
  app.add_flag("--json", o.json, "Machine-readable JSON output");

  auto pools_opt = [&](CLI::App* c) { c->add_option("--pools", o.pools, "Value-pool JSON (default: built-in pools)"); };
  auto manifest_opt = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--manifest", o.manifest, "Corpus manifest JSON");
    if (required) opt->required();
  };

  auto* validate = app.add_subcommand("validate", "Check clips against the value pools");
  pools_opt(validate);
  manifest_opt(validate, false);
  validate->add_option("--clip", o.clip_files, "Clip JSON file (repeatable)");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus and simulated ratings");
  pools_opt(synth);
  synth->add_option("--spec", o.spec, "Synthetic spec JSON");
  synth->add_option("--out-dir", o.out_dir, "Output directory")->required();
  synth->add_option("--seed", o.seed, "Random seed");
  synth->add_option("--alpha", o.alpha, "Profile separation in [0,1]");
  synth->add_option("--train-per-profile", o.train_per_profile, "Training clips per profile");
  synth->add_option("--test-per-profile", o.test_per_profile, "Test clips per profile");
  synth->add_flag("--transitions", o.transitions, "Use first-order action transitions");
  synth->add_option("--raters", o.raters, "Simulated raters (0 to skip)");
  synth->add_option("--rater-clips", o.rater_clips, "Clips per simulated rater");
  synth->add_option("--study-seed", o.study_seed, "Session assignment seed for simulated raters");

  auto* train = app.add_subcommand("train", "Train one professional's style model");
  pools_opt(train);
  manifest_opt(train, true);
  train->add_option("--pro", o.pro, "Professional (manifest label) to train")->required();
  train->add_option("--out-dir", o.out_dir, "Model directory")->required();
  train->add_option("--seed", o.seed, "Random seed");
  train->add_option("--mode", o.mode, "contrast_negatives | learned_generator");
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--batch", o.batch, "Clips per batch");
  train->add_option("--d-steps", o.d_steps, "Discriminator steps per round");
  train->add_option("--branch-mode", o.branch_mode, "fused | telemetry_only | commentary_only");
  train->add_option("--gail-config", o.gail_config, "Training config JSON");
  train->add_option("--encoder-config", o.encoder_config, "Encoder config JSON");

  auto* score = app.add_subcommand("score", "Score clips under every model");
  pools_opt(score);
  manifest_opt(score, true);
  score->add_option("--models", o.models, "Model directory")->required();
  score->add_option("--out", o.out, "Output file (default stdout)");
  score->add_option("--reference", o.reference, "Fixed normalization reference JSON");
  score->add_option("--calibrate-out", o.calibrate_out, "Write this batch's range as a reference JSON");

  auto* rank = app.add_subcommand("rank", "Rank clips by fit to one professional");
  pools_opt(rank);
  manifest_opt(rank, true);
  rank->add_option("--models", o.models, "Model directory")->required();
  rank->add_option("--target", o.target, "Professional to rank against")->required();
  rank->add_option("--top", o.top, "Keep the first N");
  rank->add_option("--out", o.out, "Output file (default stdout)");

  auto* heatmap = app.add_subcommand("heatmap", "Per-timestep reward explanation for one clip");
  pools_opt(heatmap);
  manifest_opt(heatmap, true);
  heatmap->add_option("--models", o.models, "Model directory")->required();
  heatmap->add_option("--clip", o.clip, "Clip id")->required();
  heatmap->add_option("--pro", o.pro, "Model to explain (default: predicted)");
  heatmap->add_option("--out", o.out, "Output file (default stdout)");

  auto add_eval_opts = [&](CLI::App* c) {
    c->add_option("--ratings", o.ratings, "Ratings CSV (long form) or service JSONL")->required();
    c->add_option("--fit-reports", o.fit_reports, "FitReport CSV from `score`")->required();
    c->add_option("--truth", o.truth, "Truth CSV (clip_id,true_pro)")->required();
    c->add_option("--out-dir", o.out_dir, "Output directory");
    c->add_option("--consensus", o.consensus, "leave_one_out | all_raters");
    c->add_option("--model-name", o.model_name, "Rater id used for the model");
  };
  auto* eval = app.add_subcommand("eval", "Alignment metrics between raters, model and consensus");
  add_eval_opts(eval);
  auto* report = app.add_subcommand("study-report", "Summary table plus similarity and correctness grids");
  add_eval_opts(report);

  auto* serve = app.add_subcommand("serve", "Run the rating-study web service");
  pools_opt(serve);
  manifest_opt(serve, true);
  serve->add_option("--models", o.models, "Model directory (anchor names)");
  serve->add_option("--anchors", o.anchors, "Anchor professionals")->delimiter(',');
  serve->add_option("--data-dir", o.data_dir, "Directory for the rating log");
  serve->add_option("--seed", o.seed, "Study seed");
  serve->add_option("--session-size", o.session_size, "Clips per participant");
  serve->add_option("--host", o.host, "Listen address");
  serve->add_option("--port", o.port, "Listen port");
  serve->add_option("--ui-dir", o.ui_dir, "Built UI bundle");
  serve->add_option("--media-root", o.media_root, "Media files served under /media");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate(o, out);
    if (synth->parsed()) return cmd_synth(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (score->parsed()) return cmd_score(o, out);
    if (rank->parsed()) return cmd_rank(o, out);
    if (heatmap->parsed()) return cmd_heatmap(o, out);
    if (eval->parsed()) return cmd_eval(o, out, false);
    if (report->parsed()) return cmd_eval(o, out, true);
    if (serve->parsed()) return cmd_serve(o, out);
  } catch (const ValidationFailure& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const SchemaError& e) {
    err << "error: " << describe(e) << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace esir
