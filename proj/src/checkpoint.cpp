#include "lifestream/checkpoint.hpp"

#include "lifestream/errors.hpp"

namespace lifestream {

TensorFile to_tensor_file(const Checkpoint& ckpt) {
  TensorFile f;
  f.meta = {{"kind", "checkpoint"},
            {"config", ckpt.config.to_json()},
            {"schema", ckpt.schema.to_json()},
            {"vocabulary", ckpt.vocabulary.to_json()},
            {"vocabulary_digest", ckpt.digest()},
            {"encoder",
             {{"categorical_names", ckpt.encoder.categorical_names},
              {"numerical_names", ckpt.encoder.numerical_names},
              {"hidden_size", ckpt.encoder.hidden_size()},
              {"input_width", ckpt.encoder.input_width()}}},
            {"epoch", ckpt.epoch},
            {"optimizer_step", ckpt.optimizer.step},
            {"rng_state", ckpt.rng_state}};
  if (ckpt.head) f.meta["head_classes"] = ckpt.head->n_classes();

  EncoderParams<float> enc = ckpt.encoder;
  for (const auto& [name, t] : enc.trainable()) f.tensors.emplace_back("param/" + name, *t);
  for (std::size_t i = 0; i < enc.norms.size(); ++i) {
    nd::Array<float> st(1, 2);
    st << enc.norms[i].running_mean, enc.norms[i].running_var;
    f.tensors.emplace_back("batch_norm/" + enc.numerical_names[i], st);
  }
  for (const auto& [name, m] : ckpt.optimizer.m) f.tensors.emplace_back("adam.m/" + name, m);
  for (const auto& [name, v] : ckpt.optimizer.v) f.tensors.emplace_back("adam.v/" + name, v);
  if (ckpt.head) {
    f.tensors.emplace_back("head/W", ckpt.head->W);
    f.tensors.emplace_back("head/b", ckpt.head->b);
  }
  return f;
}

Checkpoint from_tensor_file(const TensorFile& f) {
  Checkpoint c;
  try {
    if (f.meta.value("kind", "") != "checkpoint") throw CheckpointError("file is not a checkpoint");
    c.config = TrainConfig::from_json(f.meta.at("config"));
    c.schema = Schema::from_json(f.meta.at("schema"));
    c.vocabulary = Vocabulary::from_json(f.meta.at("vocabulary"));
    c.epoch = f.meta.at("epoch").get<std::int64_t>();
    c.rng_state = f.meta.at("rng_state").get<std::string>();
    c.optimizer.step = f.meta.at("optimizer_step").get<std::int64_t>();
    const auto& enc = f.meta.at("encoder");
    c.encoder.config = c.config.encoder;
    c.encoder.categorical_names = enc.at("categorical_names").get<std::vector<std::string>>();
    c.encoder.numerical_names = enc.at("numerical_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  if (f.meta.value("vocabulary_digest", "") != c.digest()) {
    throw CheckpointError("checkpoint vocabulary digest does not match its schema and vocabulary");
  }

  c.encoder.embeddings.resize(c.encoder.categorical_names.size());
  for (auto& [name, t] : c.encoder.trainable()) *t = f.at("param/" + name);
  for (const auto& name : c.encoder.numerical_names) {
    const auto& st = f.at("batch_norm/" + name);
    if (st.size() != 2) throw CheckpointError("batch_norm/" + name + " must hold 2 values");
    c.encoder.norms.push_back({st(0, 0), st(0, 1)});
  }
  const nd::Index d = c.encoder.U_z.rows();
  const nd::Index in = c.encoder.W_z.rows();
  nd::Index widths = static_cast<nd::Index>(c.encoder.norms.size());
  for (const auto& e : c.encoder.embeddings) widths += e.cols();
  for (const auto* m : {&c.encoder.W_r, &c.encoder.W_h}) {
    if (m->rows() != in || m->cols() != d) throw CheckpointError("inconsistent GRU input matrices");
  }
  for (const auto* m : {&c.encoder.U_z, &c.encoder.U_r, &c.encoder.U_h}) {
    if (m->rows() != d || m->cols() != d) throw CheckpointError("inconsistent GRU recurrent matrices");
  }
  for (const auto* m : {&c.encoder.b_z, &c.encoder.b_r, &c.encoder.b_h}) {
    if (m->rows() != 1 || m->cols() != d) throw CheckpointError("inconsistent GRU biases");
  }
  if (widths != in || d != c.config.encoder.hidden_size) {
    throw CheckpointError("encoder tensor shapes disagree with the configuration");
  }
  for (const auto& [name, t] : f.tensors) {
    if (name.rfind("adam.m/", 0) == 0) c.optimizer.m.emplace(name.substr(7), t);
    if (name.rfind("adam.v/", 0) == 0) c.optimizer.v.emplace(name.substr(7), t);
  }
  if (f.contains("head/W")) {
    HeadParams h{f.at("head/W"), f.at("head/b")};
    if (h.W.rows() != d || h.b.rows() != 1 || h.b.cols() != h.W.cols()) throw CheckpointError("inconsistent head shapes");
    c.head = std::move(h);
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_tensor_file(path, to_tensor_file(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return from_tensor_file(read_tensor_file(path)); }

}  // namespace lifestream
