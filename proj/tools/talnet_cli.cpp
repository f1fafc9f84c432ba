#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "talnet/diagnostics.hpp"
#include "talnet/data/io.hpp"
#include "talnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace talnet;

namespace {

enum Exit { ok = 0, usage = 1, data_error = 2, numerical = 3 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
};

struct GradCheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file");
  cmd->add_option("--set", c.overrides, "override one key, k=v (repeatable)");
  cmd->add_option("--out", c.out, "output directory (else $TALNET_OUTPUT_DIR, else runs/<command>)");
}

fs::path output_dir(const Common& c, const std::string& command) {
  fs::path dir;
  if (!c.out.empty()) {
    dir = c.out;
  } else if (const char* env = std::getenv("TALNET_OUTPUT_DIR"); env && *env) {
    dir = env;
  } else {
    dir = fs::path("runs") / command;
  }
  fs::create_directories(dir);
  return dir;
}

void apply_overrides(TrainConfig& cfg, const Common& c) {
  ConfigKeys keys(cfg);
  for (const auto& o : c.overrides) keys.assign(o);
}

TrainConfig build_config(const Common& c) {
  TrainConfig cfg;
  if (!c.config_path.empty()) load_config_file(c.config_path, cfg);
  apply_overrides(cfg, c);
  cfg.validate();
  return cfg;
}

/// `dir` may be a dataset itself or a `synth` output holding train/ and test/.
Dataset load_split(const std::string& dir, const std::string& split) {
  const fs::path root(dir);
  if (fs::exists(root / split / "manifest.tsv")) return load_dataset(root / split);
  if (fs::exists(root / "manifest.tsv")) return load_dataset(root);
  throw DataError("no dataset found in " + dir + " (expected manifest.tsv or " + split + "/manifest.tsv)");
}

Dataset split_or_generate(const TrainConfig& cfg, const std::string& split) {
  if (!cfg.data.dir.empty()) return load_split(cfg.data.dir, split);
  return generate_synthetic(cfg.data.synthetic(split == "test"), cfg.model.schema);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

int cmd_synth(const Common& c) {
  const auto cfg = build_config(c);
  const auto dir = output_dir(c, "synth");
  for (const char* split : {"train", "test"}) {
    const auto ds = generate_synthetic(cfg.data.synthetic(std::string(split) == "test"), cfg.model.schema);
    save_dataset(ds, dir / split);
    std::cout << split << ": " << ds.sequences.size() << " sequences, " << ds.identities().size() << " identities -> "
              << (dir / split).string() << "\n";
  }
  std::ofstream cfg_out(dir / "config.txt");
  write_config(cfg_out, cfg);
  return ok;
}

int cmd_train(const Common& c, bool quiet) {
  TrainConfig cfg = build_config(c);
  const auto dir = output_dir(c, "train");
  const auto train_set = split_or_generate(cfg, "train");
  cfg.model = model_config_for(cfg, train_set);
  cfg.validate();
  {
    std::ofstream cfg_out(dir / "config.txt");
    write_config(cfg_out, cfg);
  }
  TALNet<float> model(cfg.model);
  model.initialize(cfg.optim.seed);
  TrainOptions opt;
  opt.out_dir = dir.string();
  opt.progress = quiet ? nullptr : &std::cout;
  const auto log = train(model, cfg, train_set, opt);
  std::cout << "trained " << log.epochs.size() << " epochs (" << log.stage1_epochs_run << " in stage 1"
            << (log.stage1_plateaued ? ", plateaued" : "") << ") in " << log.seconds << " s\n";
  std::cout << "checkpoint: " << (dir / "checkpoint.txt").string() << "\n";
  return ok;
}

struct EvalArgs {
  std::string checkpoint, query, gallery, pooling;
  bool no_baseline = false;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  const auto dir = output_dir(c, "eval");
  TrainConfig cfg;
  RankingResult result;
  std::string title;
  if (!a.query.empty() || !a.gallery.empty()) {
    if (a.query.empty() || a.gallery.empty()) throw ConfigError("--query and --gallery go together");
    cfg = build_config(c);
    result = evaluate(read_embeddings(a.query), read_embeddings(a.gallery), cfg.eval.protocol, cfg.loss.lambda_sim);
    title = "embeddings " + a.query + " vs " + a.gallery;
  } else {
    if (a.checkpoint.empty()) throw ConfigError("eval needs --checkpoint (or --query and --gallery)");
    if (!fs::exists(a.checkpoint)) throw DataError("checkpoint not found: " + a.checkpoint);
    auto [ck_cfg, model] = load_model<float>(a.checkpoint);
    cfg = ck_cfg;
    if (!c.config_path.empty()) load_config_file(c.config_path, cfg);
    apply_overrides(cfg, c);
    if (!a.pooling.empty()) cfg.eval.pooling = parse_pooling(a.pooling);
    const auto test = split_or_generate(cfg, "test");
    const auto recs = describe_dataset(*model, test, cfg.eval.pooling, cfg.optim.seed);
    write_embeddings((dir / "embeddings.tsv").string(), recs);
    result = evaluate(recs, recs, cfg.eval.protocol, cfg.loss.lambda_sim);
    title = "TALNet (" + to_string(cfg.eval.pooling) + " pooling) on " + std::to_string(test.sequences.size()) + " sequences";
    if (!a.no_baseline) {
      const auto base = evaluate_raw_pixels(test, cfg.eval.protocol);
      std::ofstream b(dir / "baseline_metrics.csv");
      write_metrics_csv(b, base);
      std::ostringstream rep;
      write_report(rep, base, "raw-pixel nearest neighbour");
      std::cout << rep.str();
      write_text(dir / "baseline_report.txt", rep.str());
    }
  }
  std::ofstream m(dir / "metrics.csv");
  write_metrics_csv(m, result);
  std::ostringstream rep;
  write_report(rep, result, title);
  write_text(dir / "report.txt", rep.str());
  std::cout << rep.str();
  return ok;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& variants, bool quiet) {
  TrainConfig cfg = build_config(c);
  const auto dir = output_dir(c, "ablate");
  const auto train_set = split_or_generate(cfg, "train");
  const auto test_set = split_or_generate(cfg, "test");
  TrainOptions opt;
  opt.out_dir = dir.string();
  opt.progress = quiet ? nullptr : &std::cout;
  const auto rows = ablate<float>(cfg, select_variants(variants), train_set, test_set, opt);
  std::ofstream table(dir / "ablation.csv");
  write_ablation_table(table, rows);
  write_ablation_table(std::cout, rows);
  return ok;
}

int cmd_gradcheck(const Common& c, std::uint64_t seed) {
  const auto dir = output_dir(c, "gradcheck");
  const auto cases = run_gradcheck_suite(seed);
  std::ostringstream rep;
  const bool passed = write_gradcheck_report(rep, cases);
  write_text(dir / "gradcheck.txt", rep.str());
  std::cout << rep.str();
  if (!passed) throw GradCheckFailed("gradient check failed");
  return ok;
}

struct DumpArgs {
  std::string checkpoint;
  int sequence = -1;
  std::size_t clip = 0;
};

int cmd_dump_attention(const Common& c, const DumpArgs& a) {
  const auto dir = output_dir(c, "dump-attention");
  if (!fs::exists(a.checkpoint)) throw DataError("checkpoint not found: " + a.checkpoint);
  auto [cfg, model] = load_model<float>(a.checkpoint);
  apply_overrides(cfg, c);
  const auto& mc = model->config();
  if (!mc.use_att) throw ConfigError("checkpoint has no attribute branch");
  const auto test = split_or_generate(cfg, "test");
  const VideoSequence* seq = &test.sequences.front();
  if (a.sequence >= 0) {
    seq = nullptr;
    for (const auto& s : test.sequences)
      if (s.sequence_id == a.sequence) seq = &s;
    if (!seq) throw DataError("sequence " + std::to_string(a.sequence) + " not in the test split");
  }
  const auto clips = split_clips(*seq, mc.clip_length);
  if (a.clip >= clips.size())
    throw DataError("sequence " + std::to_string(seq->sequence_id) + " has only " + std::to_string(clips.size()) + " clips");

  NoGradGuard guard;
  const auto out = model->forward(clips_to_tensor<float>({clips[a.clip]}), 1);
  std::vector<std::string> names, lattice_names;
  for (const auto& at : mc.schema.attributes) names.push_back(at.name);
  for (auto k : model->attribute_order()) lattice_names.push_back(names[k]);

  std::ofstream regions(dir / "regions.tsv");
  regions << "# sequence " << seq->sequence_id << " clip " << a.clip << "\n";
  write_region_table(regions, out.region_bounds, names, static_cast<double>(mc.backbone.height),
                     static_cast<double>(mc.backbone.width));
  std::cout << "regions: " << (dir / "regions.tsv").string() << "\n";
  if (out.scores) {
    std::ofstream att(dir / "attention.tsv");
    att << "# sequence " << seq->sequence_id << " clip " << a.clip << ", rows in processing order\n";
    write_attention_tables(att, *out.scores, 0, lattice_names);
    std::cout << "attention: " << (dir / "attention.tsv").string() << "\n";
  } else {
    std::cout << "no context attention in this model; attention.tsv not written\n";
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TALNet video re-identification on synthetic pedestrians"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no per-epoch progress");
  app.fallthrough();

  Common synth_c, train_c, eval_c, ablate_c, gc_c, dump_c;
  auto* synth = app.add_subcommand("synth", "generate the synthetic train/test split on disk");
  add_common(synth, synth_c);

  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint and loss CSVs");
  add_common(train_cmd, train_c);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "CMC / mAP of a checkpoint or of two embedding files");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint written by train");
  eval_cmd->add_option("--query", eval_args.query, "query embeddings (TSV)");
  eval_cmd->add_option("--gallery", eval_args.gallery, "gallery embeddings (TSV)");
  eval_cmd->add_option("--pooling", eval_args.pooling, "mean | max | random-sample");
  eval_cmd->add_flag("--no-baseline", eval_args.no_baseline, "skip the raw-pixel baseline");

  std::vector<std::string> variants;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare the ablation variants");
  add_common(ablate_cmd, ablate_c);
  ablate_cmd->add_option("--variants", variants, "subset of variant names (default: all)")->delimiter(',');

  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every block");
  add_common(gc, gc_c);
  gc->add_option("--seed", gc_seed, "seed for the random instances");

  DumpArgs dump_args;
  auto* dump = app.add_subcommand("dump-attention", "region boxes and a_S / a_T tables for one clip");
  add_common(dump, dump_c);
  dump->add_option("--checkpoint", dump_args.checkpoint, "checkpoint written by train")->required();
  dump->add_option("--sequence", dump_args.sequence, "test sequence id (default: first)");
  dump->add_option("--clip", dump_args.clip, "clip index within the sequence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*train_cmd) return cmd_train(train_c, quiet);
    if (*eval_cmd) return cmd_eval(eval_c, eval_args);
    if (*ablate_cmd) return cmd_ablate(ablate_c, variants, quiet);
    if (*gc) return cmd_gradcheck(gc_c, gc_seed);
    if (*dump) return cmd_dump_attention(dump_c, dump_args);
  } catch (const GradCheckFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    return numerical;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return numerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return data_error;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return data_error;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return data_error;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data_error;
  }
  return usage;
}
