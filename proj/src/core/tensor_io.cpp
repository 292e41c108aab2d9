#include "core/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "core/errors.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace covobf {

namespace {

template <typename T>
void append_scalar_le(std::string& out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T read_scalar_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("short write to " + path.string());
}

ordered_json parse_json_file(const fs::path& path) {
  ordered_json j = ordered_json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw DataError("malformed JSON in " + path.string());
  return j;
}

size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw DataError("unsupported dtype: " + dtype);
}

}  // namespace

void write_tensor_dir(const std::string& dir, const NamedTensors& tensors,
                      const std::string& dtype) {
  dtype_size(dtype);
  fs::create_directories(dir);
  ordered_json index = ordered_json::object();
  std::string blob;
  for (const auto& [name, mat] : tensors) {
    ordered_json entry;
    entry["offset"] = blob.size();
    if (mat.rows() == 1)
      entry["shape"] = ordered_json::array({mat.cols()});
    else
      entry["shape"] = ordered_json::array({mat.rows(), mat.cols()});
    entry["dtype"] = dtype;
    index[name] = entry;
    for (int r = 0; r < mat.rows(); ++r)
      for (int c = 0; c < mat.cols(); ++c) {
        if (dtype == "f32")
          append_scalar_le<float>(blob, static_cast<float>(mat(r, c)));
        else
          append_scalar_le<double>(blob, mat(r, c));
      }
  }
  write_file(fs::path(dir) / "index.json", index.dump(2) + "\n");
  write_file(fs::path(dir) / "tensors.bin", blob);
}

NamedTensors read_tensor_dir(const std::string& dir) {
  ordered_json index = parse_json_file(fs::path(dir) / "index.json");
  if (!index.is_object()) throw DataError("index.json: expected an object");
  std::string blob = read_file(fs::path(dir) / "tensors.bin");

  NamedTensors out;
  for (auto& [name, entry] : index.items()) {
    if (!entry.contains("offset") || !entry.contains("shape") || !entry.contains("dtype"))
      throw DataError("index.json: incomplete entry for " + name);
    uint64_t offset = entry["offset"].get<uint64_t>();
    std::string dtype = entry["dtype"].get<std::string>();
    size_t scalar = dtype_size(dtype);
    std::vector<int64_t> shape = entry["shape"].get<std::vector<int64_t>>();
    if (shape.empty() || shape.size() > 2)
      throw DataError("index.json: bad shape rank for " + name);
    int64_t rows = shape.size() == 2 ? shape[0] : 1;
    int64_t cols = shape.size() == 2 ? shape[1] : shape[0];
    if (rows < 0 || cols < 0) throw DataError("index.json: negative shape for " + name);
    uint64_t count = static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols);
    if (offset + count * scalar > blob.size())
      throw DataError("tensors.bin: truncated or bad offset for " + name);

    Matrix mat(rows, cols);
    const char* p = blob.data() + offset;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) {
        if (dtype == "f32")
          mat(r, c) = static_cast<double>(read_scalar_le<float>(p));
        else
          mat(r, c) = read_scalar_le<double>(p);
        p += scalar;
      }
    out.emplace_back(name, std::move(mat));
  }
  return out;
}

namespace {

ordered_json config_to_json(const ModelConfig& cfg) {
  ordered_json j;
  j["n_vocab"] = cfg.n_vocab;
  j["hidden_size"] = cfg.hidden;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["n_kv_heads"] = cfg.n_kv_heads;
  j["head_dim"] = cfg.head_dim;
  j["ffn_dim"] = cfg.ffn_dim;
  j["n_experts"] = cfg.n_experts;
  j["top_k_experts"] = cfg.top_k_experts;
  j["rope_base"] = cfg.rope_base;
  j["eps_norm"] = cfg.eps_norm;
  j["max_seq"] = cfg.max_seq;
  j["obfuscated"] = cfg.obfuscated;
  return j;
}

ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig cfg;
  try {
    cfg.n_vocab = j.at("n_vocab").get<int>();
    cfg.hidden = j.at("hidden_size").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_kv_heads = j.at("n_kv_heads").get<int>();
    cfg.head_dim = j.at("head_dim").get<int>();
    cfg.ffn_dim = j.at("ffn_dim").get<int>();
    cfg.n_experts = j.at("n_experts").get<int>();
    cfg.top_k_experts = j.at("top_k_experts").get<int>();
    cfg.rope_base = j.at("rope_base").get<double>();
    cfg.eps_norm = j.at("eps_norm").get<double>();
    cfg.max_seq = j.at("max_seq").get<int>();
    cfg.obfuscated = j.value("obfuscated", false);
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("config.json: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string layer_prefix(int i) { return "layer." + std::to_string(i) + "."; }

void collect_ffn(NamedTensors& out, const std::string& prefix, const FfnWeights& f) {
  out.emplace_back(prefix + "gate", f.gate);
  out.emplace_back(prefix + "up", f.up);
  out.emplace_back(prefix + "down", f.down);
}

}  // namespace

void save_model(const ModelWeights& w, const std::vector<std::string>& vocab,
                const std::string& dir) {
  validate_weights(w);
  if (static_cast<int>(vocab.size()) != w.config.n_vocab)
    throw DataError("save_model: vocab size does not match n_vocab");
  fs::create_directories(dir);

  NamedTensors tensors;
  tensors.emplace_back("embed", w.embed);
  tensors.emplace_back("head", w.head);
  tensors.emplace_back("final_norm", w.final_norm);
  for (int i = 0; i < w.config.n_layers; ++i) {
    const LayerWeights& layer = w.layers[i];
    const std::string p = layer_prefix(i);
    tensors.emplace_back(p + "input_norm", layer.input_norm);
    tensors.emplace_back(p + "post_attn_norm", layer.post_attn_norm);
    tensors.emplace_back(p + "attn.q", layer.attn.wq);
    tensors.emplace_back(p + "attn.k", layer.attn.wk);
    tensors.emplace_back(p + "attn.v", layer.attn.wv);
    tensors.emplace_back(p + "attn.o", layer.attn.wo);
    if (w.config.n_experts > 0) {
      tensors.emplace_back(p + "router", layer.router);
      for (int e = 0; e < w.config.n_experts; ++e)
        collect_ffn(tensors, p + "expert." + std::to_string(e) + ".", layer.experts[e]);
    } else {
      collect_ffn(tensors, p + "ffn.", layer.ffn);
    }
  }
  write_tensor_dir(dir, tensors, "f32");
  write_file(fs::path(dir) / "config.json", config_to_json(w.config).dump(2) + "\n");
  write_file(fs::path(dir) / "vocab.json", ordered_json(vocab).dump(2) + "\n");
}

ModelWeights load_model(const std::string& dir) {
  ModelConfig cfg = config_from_json(parse_json_file(fs::path(dir) / "config.json"));
  NamedTensors tensors = read_tensor_dir(dir);
  auto find = [&](const std::string& name) -> const Matrix& {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw DataError("model directory missing tensor " + name);
  };

  ModelWeights w;
  w.config = cfg;
  w.embed = find("embed");
  w.head = find("head");
  w.final_norm = find("final_norm");
  w.layers.resize(cfg.n_layers);
  for (int i = 0; i < cfg.n_layers; ++i) {
    LayerWeights& layer = w.layers[i];
    const std::string p = layer_prefix(i);
    layer.input_norm = find(p + "input_norm");
    layer.post_attn_norm = find(p + "post_attn_norm");
    layer.attn.wq = find(p + "attn.q");
    layer.attn.wk = find(p + "attn.k");
    layer.attn.wv = find(p + "attn.v");
    layer.attn.wo = find(p + "attn.o");
    if (cfg.n_experts > 0) {
      layer.router = find(p + "router");
      layer.experts.resize(cfg.n_experts);
      for (int e = 0; e < cfg.n_experts; ++e) {
        const std::string ep = p + "expert." + std::to_string(e) + ".";
        layer.experts[e].gate = find(ep + "gate");
        layer.experts[e].up = find(ep + "up");
        layer.experts[e].down = find(ep + "down");
      }
    } else {
      layer.ffn.gate = find(p + "ffn.gate");
      layer.ffn.up = find(p + "ffn.up");
      layer.ffn.down = find(p + "ffn.down");
    }
  }
  validate_weights(w);
  return w;
}

std::vector<std::string> load_vocab(const std::string& dir) {
  ordered_json j = parse_json_file(fs::path(dir) / "vocab.json");
  if (!j.is_array()) throw DataError("vocab.json: expected an array");
  return j.get<std::vector<std::string>>();
}

uint64_t tensor_blob_checksum(const std::string& dir) {
  std::string blob = read_file(fs::path(dir) / "tensors.bin");
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : blob) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace covobf
