// SPDX-License-Identifier: Apache-2.0
#include "rerender/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace rerender {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'R', 'R', 'C', 'K'};
}

bool TensorFile::has(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return true;
  return false;
}

const MatX& TensorFile::at(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  fail("checkpoint: tensor '" + name + "' not found");
}

void TensorFile::put(const std::string& name, const MatX& m) { tensors.emplace_back(name, m); }

void TensorFile::put(const std::string& name, const VecX& v) {
  MatX m(v.size(), 1);
  m.col(0) = v;
  tensors.emplace_back(name, std::move(m));
}

void save_tensor_file(const std::string& path, const TensorFile& tf) {
  json header;
  header["kind"] = tf.kind;
  header["meta"] = json::parse(tf.meta_json);
  json index = json::array();
  for (const auto& [name, m] : tf.tensors)
    index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["tensors"] = index;
  const std::string hs = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "checkpoint: cannot write '" + tmp + "'");
    out.write(kMagic, 4);
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, m] : tf.tensors)
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
    require(out.good(), "checkpoint: write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

TensorFile load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, kMagic, 4) == 0,
          "checkpoint: '" + path + "' is not a checkpoint file");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  require(in.good(), "checkpoint: truncated header in '" + path + "'");
  const json header = json::parse(hs);

  TensorFile tf;
  tf.kind = header.at("kind").get<std::string>();
  tf.meta_json = header.at("meta").dump();
  for (const auto& e : header.at("tensors")) {
    MatX m(e.at("rows").get<Eigen::Index>(), e.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    require(in.good(), "checkpoint: truncated tensor in '" + path + "'");
    tf.tensors.emplace_back(e.at("name").get<std::string>(), std::move(m));
  }
  return tf;
}

void put_mlp(TensorFile& tf, const std::string& prefix, const nn::Mlp& mlp) {
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    tf.put(prefix + "." + std::to_string(i) + ".W", mlp.layers[i].W);
    tf.put(prefix + "." + std::to_string(i) + ".b", mlp.layers[i].b);
  }
}

void get_mlp(const TensorFile& tf, const std::string& prefix, nn::Mlp& mlp) {
  std::vector<nn::Linear> layers;
  for (size_t i = 0;; ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    if (!tf.has(base + ".W")) break;
    nn::Linear l;
    l.W = tf.at(base + ".W");
    l.b = tf.at(base + ".b");
    l.gW = MatX::Zero(l.W.rows(), l.W.cols());
    l.gb = MatX::Zero(l.b.rows(), l.b.cols());
    layers.push_back(std::move(l));
  }
  require(!layers.empty(), "checkpoint: no layers under prefix '" + prefix + "'");
  mlp.layers = std::move(layers);
}

// ---------------------------------------------------------------------------
// Scene model

namespace {

json config_to_json(const ModelConfig& c) {
  return {{"pos_freqs", c.pos_freqs},       {"dir_freqs", c.dir_freqs},
          {"geom_width", c.geom_width},     {"geom_hidden", c.geom_hidden},
          {"feature_dim", c.feature_dim},   {"app_width", c.app_width},
          {"app_hidden", c.app_hidden},     {"shadow_width", c.shadow_width},
          {"shadow_hidden", c.shadow_hidden}, {"sky_width", c.sky_width},
          {"sky_hidden", c.sky_hidden},     {"dim_le", c.dim_le},
          {"dim_ls", c.dim_ls},             {"dim_lt", c.dim_lt},
          {"init_inv_sharpness", c.init_inv_sharpness},
          {"query_radius", c.query_radius}, {"code_init_std", c.code_init_std}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.pos_freqs = j.at("pos_freqs");
  c.dir_freqs = j.at("dir_freqs");
  c.geom_width = j.at("geom_width");
  c.geom_hidden = j.at("geom_hidden");
  c.feature_dim = j.at("feature_dim");
  c.app_width = j.at("app_width");
  c.app_hidden = j.at("app_hidden");
  c.shadow_width = j.at("shadow_width");
  c.shadow_hidden = j.at("shadow_hidden");
  c.sky_width = j.at("sky_width");
  c.sky_hidden = j.at("sky_hidden");
  c.dim_le = j.at("dim_le");
  c.dim_ls = j.at("dim_ls");
  c.dim_lt = j.at("dim_lt");
  c.init_inv_sharpness = j.at("init_inv_sharpness");
  c.query_radius = j.at("query_radius");
  c.code_init_std = j.at("code_init_std");
  return c;
}

}  // namespace

void save_scene_model(const std::string& path, const SceneModel& model) {
  TensorFile tf;
  tf.kind = "scene_model";
  json meta;
  meta["seed"] = model.seed;
  meta["cfg"] = config_to_json(model.cfg);
  meta["log_sharpness"] = model.log_sharpness;
  json frames = json::array();
  for (const auto& [id, c] : model.codes) frames.push_back(id);
  meta["frames"] = frames;
  tf.meta_json = meta.dump();
  put_mlp(tf, "geometry", model.geometry);
  put_mlp(tf, "appearance", model.appearance);
  put_mlp(tf, "shadow", model.shadow);
  put_mlp(tf, "sky", model.sky);
  put_mlp(tf, "tone", model.tone.net);
  for (const auto& [id, c] : model.codes) {
    tf.put("code." + id + ".le", c.l_e);
    tf.put("code." + id + ".ls", c.l_s);
    tf.put("code." + id + ".lt", c.l_t);
  }
  save_tensor_file(path, tf);
}

SceneModel load_scene_model(const std::string& path) {
  const TensorFile tf = load_tensor_file(path);
  require(tf.kind == "scene_model", "checkpoint: '" + path + "' holds kind '" + tf.kind +
                                        "', expected scene_model");
  const json meta = json::parse(tf.meta_json);
  SceneModel model =
      SceneModel::create(meta.at("seed").get<uint64_t>(), config_from_json(meta.at("cfg")));
  model.log_sharpness = meta.at("log_sharpness").get<double>();
  get_mlp(tf, "geometry", model.geometry);
  get_mlp(tf, "appearance", model.appearance);
  get_mlp(tf, "shadow", model.shadow);
  get_mlp(tf, "sky", model.sky);
  get_mlp(tf, "tone", model.tone.net);
  for (const auto& idj : meta.at("frames")) {
    const std::string id = idj.get<std::string>();
    FrameCodes c;
    c.l_e = tf.at("code." + id + ".le").col(0);
    c.l_s = tf.at("code." + id + ".ls").col(0);
    c.l_t = tf.at("code." + id + ".lt").col(0);
    model.codes[id] = std::move(c);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Stage-1 heads

void save_stage1_heads(const std::string& path, const Stage1Model& model) {
  TensorFile tf;
  tf.kind = "stage1_heads";
  json meta;
  meta["seed"] = model.seed;
  meta["dim_emb_a"] = model.dim_emb_a;
  meta["dim_emb_tau"] = model.dim_emb_tau;
  json frames = json::array();
  for (const auto& [id, e] : model.emb_a) frames.push_back(id);
  meta["frames"] = frames;
  tf.meta_json = meta.dump();
  put_mlp(tf, "radiance", model.radiance);
  put_mlp(tf, "transient", model.transient);
  put_mlp(tf, "sky_head", model.sky_head);
  for (const auto& [id, e] : model.emb_a) tf.put("emb." + id + ".a", e);
  for (const auto& [id, e] : model.emb_tau) tf.put("emb." + id + ".tau", e);
  save_tensor_file(path, tf);
}

void load_stage1_heads(const std::string& path, Stage1Model& model) {
  require(model.scene != nullptr, "load_stage1_heads: model must be bound to a scene");
  const TensorFile tf = load_tensor_file(path);
  require(tf.kind == "stage1_heads", "checkpoint: '" + path + "' holds kind '" + tf.kind +
                                         "', expected stage1_heads");
  const json meta = json::parse(tf.meta_json);
  model.seed = meta.at("seed").get<uint64_t>();
  model.dim_emb_a = meta.at("dim_emb_a").get<int>();
  model.dim_emb_tau = meta.at("dim_emb_tau").get<int>();
  get_mlp(tf, "radiance", model.radiance);
  get_mlp(tf, "transient", model.transient);
  get_mlp(tf, "sky_head", model.sky_head);
  model.emb_a.clear();
  model.emb_tau.clear();
  for (const auto& idj : meta.at("frames")) {
    const std::string id = idj.get<std::string>();
    model.emb_a[id] = tf.at("emb." + id + ".a").col(0);
    model.emb_tau[id] = tf.at("emb." + id + ".tau").col(0);
  }
}

// ---------------------------------------------------------------------------
// Sky decoder

void save_sky_pretrain(const std::string& path, const SkyPretrainResult& r) {
  TensorFile tf;
  tf.kind = "sky_pretrain";
  json meta;
  meta["latent_dim"] = r.decoder.latent_dim;
  meta["native_h"] = r.decoder.native_h;
  meta["native_w"] = r.decoder.native_w;
  meta["out_h"] = r.decoder.out_h;
  meta["out_w"] = r.decoder.out_w;
  meta["heldout_log_mae"] = r.heldout_log_mae;
  meta["final_train_loss"] = r.final_train_loss;
  tf.meta_json = meta.dump();
  put_mlp(tf, "decoder", r.decoder.net);
  put_mlp(tf, "encoder", r.encoder);
  save_tensor_file(path, tf);
}

SkyPretrainResult load_sky_pretrain(const std::string& path) {
  const TensorFile tf = load_tensor_file(path);
  require(tf.kind == "sky_pretrain", "checkpoint: '" + path + "' holds kind '" + tf.kind +
                                         "', expected sky_pretrain");
  const json meta = json::parse(tf.meta_json);
  SkyPretrainResult r;
  r.decoder.latent_dim = meta.at("latent_dim").get<int>();
  r.decoder.native_h = meta.at("native_h").get<int>();
  r.decoder.native_w = meta.at("native_w").get<int>();
  r.decoder.out_h = meta.at("out_h").get<int>();
  r.decoder.out_w = meta.at("out_w").get<int>();
  r.decoder.frozen = true;
  r.decoder.net.hidden = nn::Act::ReLU;
  r.decoder.net.output = nn::Act::None;
  get_mlp(tf, "decoder", r.decoder.net);
  r.encoder.hidden = nn::Act::ReLU;
  r.encoder.output = nn::Act::None;
  get_mlp(tf, "encoder", r.encoder);
  r.heldout_log_mae = meta.at("heldout_log_mae").get<double>();
  r.final_train_loss = meta.at("final_train_loss").get<double>();
  return r;
}

SkyDecoder load_sky_decoder(const std::string& path) { return load_sky_pretrain(path).decoder; }

// ---------------------------------------------------------------------------
// Realism net

void save_realism(const std::string& path, const RealismNet& net) {
  TensorFile tf;
  tf.kind = "realism";
  json meta;
  meta["channels"] = net.channels;
  tf.meta_json = meta.dump();
  const nn::Conv3x3* convs[] = {&net.enc1, &net.enc2, &net.enc3, &net.enc4};
  for (int i = 0; i < 4; ++i) {
    tf.put("conv." + std::to_string(i) + ".W", convs[i]->W);
    tf.put("conv." + std::to_string(i) + ".b", convs[i]->b);
  }
  put_mlp(tf, "decoder", net.decoder);
  save_tensor_file(path, tf);
}

RealismNet load_realism(const std::string& path) {
  const TensorFile tf = load_tensor_file(path);
  require(tf.kind == "realism",
          "checkpoint: '" + path + "' holds kind '" + tf.kind + "', expected realism");
  const json meta = json::parse(tf.meta_json);
  RealismNet net = RealismNet::create(0);
  net.channels = meta.at("channels").get<int>();
  nn::Conv3x3* convs[] = {&net.enc1, &net.enc2, &net.enc3, &net.enc4};
  for (int i = 0; i < 4; ++i) {
    convs[i]->W = tf.at("conv." + std::to_string(i) + ".W");
    convs[i]->b = tf.at("conv." + std::to_string(i) + ".b");
    convs[i]->gW = MatX::Zero(convs[i]->W.rows(), convs[i]->W.cols());
    convs[i]->gb = MatX::Zero(convs[i]->b.rows(), convs[i]->b.cols());
  }
  get_mlp(tf, "decoder", net.decoder);
  return net;
}

}  // namespace rerender
