#include "lifestream/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lifestream/checkpoint.hpp"
#include "lifestream/config.hpp"
#include "lifestream/errors.hpp"
#include "lifestream/evaluation.hpp"
#include "lifestream/ingest.hpp"
#include "lifestream/trainer.hpp"

namespace lifestream {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path out = path;
  out.replace_extension();
  out += suffix;
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

struct SynthArgs {
  std::string out;
  std::string schema;
  SynthConfig cfg;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  a.cfg.validate();
  const std::vector<RawSequence> data = generate_synthetic(a.cfg);
  const fs::path schema_path = a.schema.empty() ? sibling(a.out, ".schema.json") : fs::path(a.schema);
  save_dataset(a.out, data, synthetic_schema());
  save_schema(synthetic_schema(), schema_path);
  std::size_t events = 0;
  for (const auto& s : data) events += s.events.size();
  out << "wrote " << data.size() << " persons, " << events << " events to " << a.out << "\n";
  out << "schema " << schema_path.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string schema;
  std::string out;
  std::string metrics;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg = apply_overrides(cfg, a.overrides);
  cfg.validate();
  out << "config " << cfg.to_json().dump() << "\n" << std::flush;
  const Schema schema = load_schema(a.schema);
  const std::vector<RawSequence> raw = load_dataset(a.data, schema);
  const TrainResult result = train(cfg, raw, schema, [&out](const EpochMetrics& m) {
    out << "epoch=" << m.epoch << " train_loss=" << fmt(m.train_loss) << " val_loss=" << fmt(m.val_loss) << "\n"
        << std::flush;
  });
  save_checkpoint(result.checkpoint, a.out);
  const fs::path metrics = a.metrics.empty() ? sibling(a.out, ".metrics.csv") : fs::path(a.metrics);
  write_metrics_csv(metrics, result.metrics);
  out << "checkpoint " << a.out << "\nmetrics " << metrics.string() << "\n";
  return kExitOk;
}

struct EmbedArgs {
  std::string ckpt;
  std::string data;
  std::string schema;
  std::string out;
  std::string states;
};

int cmd_embed(const EmbedArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Schema schema = a.schema.empty() ? ckpt.schema : load_schema(a.schema);
  const std::vector<RawSequence> raw = load_dataset(a.data, schema);
  const EmbeddingExport exported = export_embeddings(ckpt, raw, schema);
  write_embeddings_csv(a.out, exported.table);
  out << "wrote " << exported.table.size() << " embeddings (d=" << exported.table.vectors.cols() << ") to " << a.out
      << "\n";
  if (!a.states.empty()) {
    save_person_states(a.states, to_person_states(exported, ckpt));
    out << "states " << a.states << "\n";
  }
  return kExitOk;
}

struct UpdateArgs {
  std::string ckpt;
  std::string state;
  std::string new_events;
  std::string out;
  std::string out_state;
};

int cmd_update(const UpdateArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const PersonStates states = load_person_states(a.state);
  const std::vector<RawSequence> fresh = load_dataset(a.new_events, ckpt.schema, true);
  const PersonStates updated = update_person_states(ckpt, states, fresh);
  write_embeddings_csv(a.out, states_table(updated));
  const fs::path state_out = a.out_state.empty() ? sibling(a.out, ".state.mels") : fs::path(a.out_state);
  save_person_states(state_out, updated);
  std::size_t events = 0;
  for (const auto& s : fresh) events += s.events.size();
  out << "applied " << events << " new events; wrote " << updated.person_ids.size() << " embeddings to " << a.out
      << "\nstates " << state_out.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string embeddings;
  std::string probe = "linear";
  std::string metric = "accuracy";
  int folds = 5;
  int k = 5;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const EmbeddingTable table = read_embeddings_csv(a.embeddings);
  ProbeReport report;
  if (a.probe == "linear") {
    report = linear_probe(table, a.folds, parse_probe_metric(a.metric), a.seed);
  } else if (a.probe == "knn") {
    if (a.metric != "accuracy") throw ConfigError("the knn probe reports accuracy only");
    report = knn_probe(table, a.k, a.folds, a.seed);
  } else {
    throw ConfigError("unknown probe \"" + a.probe + "\" (expected linear or knn)");
  }
  const nlohmann::json j = report.to_json();
  out << j.dump() << "\n";
  if (!a.out.empty()) write_json(a.out, j);
  return kExitOk;
}

struct ProjectArgs {
  std::string embeddings;
  std::string out;
};

int cmd_project(const ProjectArgs& a, std::ostream& out) {
  const EmbeddingTable table = read_embeddings_csv(a.embeddings);
  const Projection proj = pca_project(table, 2);
  write_projection_csv(a.out, table, proj);
  out << "explained_variance " << proj.explained_variance(0) << " " << proj.explained_variance(1) << "\n";
  return kExitOk;
}

struct FineTuneArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  FineTuneConfig cfg;
};

int cmd_finetune(const FineTuneArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const std::vector<RawSequence> raw = load_dataset(a.data, ckpt.schema);
  const FineTuneResult result = fine_tune(ckpt, ckpt.vocabulary.apply(raw), a.cfg);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    out << "epoch=" << e + 1 << " train_loss=" << fmt(result.epoch_loss[e]) << "\n";
  }
  save_checkpoint(result.checkpoint, a.out);
  nlohmann::json j = {{"accuracy", result.accuracy}, {"test_persons", result.test_persons.size()}};
  if (result.auroc) j["auroc"] = *result.auroc;
  out << j.dump() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised metric learning for event sequences"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a labeled synthetic event dataset");
  s->add_option("--out", synth.out, "Output dataset CSV")->required();
  s->add_option("--schema", synth.schema, "Output schema JSON (default: <out>.schema.json)");
  s->add_option("--persons", synth.cfg.n_persons, "Number of persons");
  s->add_option("--classes", synth.cfg.n_classes, "Number of label classes");
  s->add_option("--signal", synth.cfg.class_signal_strength, "Class signal strength in [0, 1]");
  s->add_option("--min-events", synth.cfg.min_events, "Minimum events per person");
  s->add_option("--max-events", synth.cfg.max_events, "Maximum events per person");
  s->add_option("--categories", synth.cfg.n_categories, "Number of event categories");
  s->add_option("--seed", synth.cfg.seed, "Random seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train an encoder with metric learning");
  t->add_option("--config", tr.config, "Config JSON (default: built-in defaults)");
  t->add_option("--data", tr.data, "Dataset CSV")->required();
  t->add_option("--schema", tr.schema, "Schema JSON")->required();
  t->add_option("--out", tr.out, "Output checkpoint")->required();
  t->add_option("--metrics", tr.metrics, "Metrics CSV (default: <out>.metrics.csv)");
  t->add_option("--seed", tr.seed, "Overrides train.seed");
  t->add_option("overrides", tr.overrides, "key=value config overrides, e.g. train.epochs=2 loss=margin");

  EmbedArgs em;
  auto* e = app.add_subcommand("embed", "Export person embeddings");
  e->add_option("--ckpt", em.ckpt, "Checkpoint")->required();
  e->add_option("--data", em.data, "Dataset CSV")->required();
  e->add_option("--schema", em.schema, "Schema JSON (default: the checkpoint's)");
  e->add_option("--out", em.out, "Output embeddings CSV")->required();
  e->add_option("--states", em.states, "Also write raw states for later updates");

  UpdateArgs up;
  auto* u = app.add_subcommand("update", "Fold new events into stored states");
  u->add_option("--ckpt", up.ckpt, "Checkpoint")->required();
  u->add_option("--state", up.state, "State file written by embed --states")->required();
  u->add_option("--new-events", up.new_events, "CSV of new events (checkpoint schema)")->required();
  u->add_option("--out", up.out, "Output embeddings CSV")->required();
  u->add_option("--out-state", up.out_state, "Output state file (default: <out>.state.mels)");

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Cross-validated probe on exported embeddings");
  v->add_option("--embeddings", ev.embeddings, "Embeddings CSV")->required();
  v->add_option("--probe", ev.probe, "linear or knn");
  v->add_option("--metric", ev.metric, "accuracy or auroc (binary labels)");
  v->add_option("--folds", ev.folds, "Number of stratified folds");
  v->add_option("--k", ev.k, "Neighbors for the knn probe");
  v->add_option("--seed", ev.seed, "Fold assignment seed");
  v->add_option("--out", ev.out, "Also write the report JSON here");

  ProjectArgs pr;
  auto* p = app.add_subcommand("project", "2-D PCA projection of embeddings");
  p->add_option("--embeddings", pr.embeddings, "Embeddings CSV")->required();
  p->add_option("--out", pr.out, "Output projection CSV")->required();

  FineTuneArgs ft;
  auto* f = app.add_subcommand("finetune", "Train a classification head, optionally with the encoder");
  f->add_option("--ckpt", ft.ckpt, "Pre-trained checkpoint")->required();
  f->add_option("--data", ft.data, "Labeled dataset CSV (checkpoint schema)")->required();
  f->add_option("--out", ft.out, "Output checkpoint with head")->required();
  f->add_option("--lr", ft.cfg.learning_rate, "Encoder learning rate");
  f->add_option("--head-lr", ft.cfg.head_learning_rate, "Classification head learning rate");
  f->add_option("--epochs", ft.cfg.epochs, "Epochs");
  f->add_option("--batch", ft.cfg.batch_persons, "Persons per batch");
  f->add_option("--test-fraction", ft.cfg.test_fraction, "Held-out person fraction");
  f->add_flag("--freeze", ft.cfg.freeze_encoder, "Train the head only");
  f->add_option("--seed", ft.cfg.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_embed(em, out);
    if (*u) return cmd_update(up, out);
    if (*v) return cmd_eval(ev, out);
    if (*p) return cmd_project(pr, out);
    if (*f) return cmd_finetune(ft, out);
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace lifestream
