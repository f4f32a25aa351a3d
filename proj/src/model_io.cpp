#include "sidecar/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sidecar/errors.hpp"

namespace sidecar {

static_assert(std::endian::native == std::endian::little, "model files are written in host order");

namespace {

constexpr char kMagic[8] = {'S', 'I', 'D', 'E', 'C', 'A', 'R', 'M'};
constexpr std::size_t kChecksumOffset = 12;
constexpr std::size_t kPayloadOffset = 20;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CorruptionError("model file truncated");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{"vocab_size",    "d_model",    "n_layers",     "n_heads",
                                          "max_seq_len",   "sidecar_layers", "ssm_channels", "n_states",
                                          "dt",            "hippo_variant", "lora_rank",  "lora_alpha",
                                          "lora_targets",  "seed"};
  return keys;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

void write_block(Writer& w, const NamedValues& block) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(block.name.size()));
  w.put_bytes(block.name.data(), block.name.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(block.rows));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(block.cols));
  w.put_bytes(block.values.data(), block.values.size() * sizeof(double));
}

// Copies a named block from the reader into the destination matrix.
void read_into(Reader& r, std::map<std::string, Matrix>& blocks, std::uint32_t count) {
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    const auto* name_ptr = r.take(name_len);
    std::string name(reinterpret_cast<const char*>(name_ptr), name_len);
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (n > r.remaining() / sizeof(double)) throw CorruptionError("model file truncated in block '" + name + "'");
    std::vector<double> values(n);
    std::memcpy(values.data(), r.take(n * sizeof(double)), n * sizeof(double));
    if (!blocks.emplace(name, Matrix(rows, cols, std::move(values))).second) {
      throw CorruptionError("duplicate block '" + name + "'");
    }
  }
}

Matrix take_block(std::map<std::string, Matrix>& blocks, const std::string& name, std::size_t rows,
                  std::size_t cols) {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw CorruptionError("missing block '" + name + "'");
  if (it->second.rows() != rows || it->second.cols() != cols) {
    throw CorruptionError("block '" + name + "' has unexpected shape");
  }
  Matrix m = std::move(it->second);
  blocks.erase(it);
  return m;
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= data[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"vocab_size", c.vocab_size},
                        {"d_model", c.d_model},
                        {"n_layers", c.n_layers},
                        {"n_heads", c.n_heads},
                        {"max_seq_len", c.max_seq_len},
                        {"sidecar_layers", c.sidecar_layers},
                        {"ssm_channels", c.ssm_channels},
                        {"n_states", c.n_states},
                        {"dt", c.dt},
                        {"hippo_variant", std::string(to_string(c.hippo_variant))},
                        {"lora_rank", c.lora_rank},
                        {"lora_alpha", c.lora_alpha},
                        {"lora_targets", c.lora_targets},
                        {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!config_keys().contains(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  ModelConfig c;
  read_field(j, "vocab_size", c.vocab_size);
  read_field(j, "d_model", c.d_model);
  read_field(j, "n_layers", c.n_layers);
  read_field(j, "n_heads", c.n_heads);
  read_field(j, "max_seq_len", c.max_seq_len);
  read_field(j, "sidecar_layers", c.sidecar_layers);
  read_field(j, "ssm_channels", c.ssm_channels);
  read_field(j, "n_states", c.n_states);
  read_field(j, "dt", c.dt);
  std::string variant(to_string(c.hippo_variant));
  read_field(j, "hippo_variant", variant);
  try {
    c.hippo_variant = parse_hippo_variant(variant);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  read_field(j, "lora_rank", c.lora_rank);
  read_field(j, "lora_alpha", c.lora_alpha);
  read_field(j, "lora_targets", c.lora_targets);
  read_field(j, "seed", c.seed);
  validate_config(c);
  return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::vector<std::uint8_t> serialize_model(const HybridModel& model) {
  nlohmann::json header{{"config", config_to_json(model.config)},
                        {"trainable_mask", mask_names(model.trainable_mask)},
                        {"init_records", model.init_records}};
  const std::string header_text = header.dump();

  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kModelFormatVersion);
  w.put<std::uint64_t>(0);  // checksum placeholder
  w.put<std::uint64_t>(header_text.size());
  w.put_bytes(header_text.data(), header_text.size());

  const auto extension = extension_parameters(model);
  const auto donor = backbone_parameters(*model.backbone);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(extension.size() + donor.size()));
  for (const auto& block : extension) write_block(w, block);
  for (const auto& block : donor) write_block(w, block);

  auto& bytes = w.bytes();
  const std::uint64_t checksum = fnv1a64(bytes.data() + kPayloadOffset, bytes.size() - kPayloadOffset);
  std::memcpy(bytes.data() + kChecksumOffset, &checksum, sizeof(checksum));
  return std::move(bytes);
}

HybridModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptionError("not a model file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kModelFormatVersion) {
    throw VersionError("model format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kModelFormatVersion) + ")");
  }
  const auto stored_checksum = r.get<std::uint64_t>();
  if (fnv1a64(bytes.data() + kPayloadOffset, bytes.size() - kPayloadOffset) != stored_checksum) {
    throw CorruptionError("model file checksum mismatch");
  }

  const auto header_len = r.get<std::uint64_t>();
  if (header_len > r.remaining()) throw CorruptionError("model header truncated");
  const auto* header_ptr = r.take(header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_ptr, header_ptr + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptionError(std::string("model header is not valid JSON: ") + e.what());
  }

  HybridModel model;
  try {
    model.config = config_from_json(header.at("config"));
    std::string mask_text;
    for (const auto& name : header.at("trainable_mask")) mask_text += name.get<std::string>() + ",";
    model.trainable_mask = parse_trainable_mask(mask_text);
    model.init_records = header.at("init_records").get<InitRecords>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("model header: ") + e.what());
  }

  std::map<std::string, Matrix> blocks;
  read_into(r, blocks, r.get<std::uint32_t>());
  if (r.remaining() != 0) throw CorruptionError("trailing bytes after last block");

  // Rebuild the structure from the config, then overwrite every value.
  const ModelConfig& cfg = model.config;
  HybridModel skeleton = init_model(cfg, InitOptions{model.trainable_mask, std::nullopt});
  Backbone bb;
  bb.embedding = take_block(blocks, "backbone.embedding", cfg.vocab_size, cfg.d_model);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "backbone.layer." + std::to_string(l) + ".";
    const std::size_t d = cfg.d_model;
    const std::size_t ff = cfg.d_ff();
    BackboneLayer layer;
    layer.attn_norm = take_block(blocks, p + "attn_norm", 1, d);
    layer.wq = take_block(blocks, p + "wq", d, d);
    layer.wk = take_block(blocks, p + "wk", d, d);
    layer.wv = take_block(blocks, p + "wv", d, d);
    layer.wo = take_block(blocks, p + "wo", d, d);
    layer.mlp_norm = take_block(blocks, p + "mlp_norm", 1, d);
    layer.w_up = take_block(blocks, p + "w_up", ff, d);
    layer.w_down = take_block(blocks, p + "w_down", d, ff);
    bb.layers.push_back(std::move(layer));
  }
  bb.final_norm = take_block(blocks, "backbone.final_norm", 1, cfg.d_model);
  skeleton.backbone = std::make_shared<const Backbone>(std::move(bb));

  for (auto& view : extension_views(skeleton)) {
    Matrix stored = take_block(blocks, view.name, view.rows, view.cols);
    std::copy(stored.values().begin(), stored.values().end(), view.values.begin());
  }
  if (!blocks.empty()) throw CorruptionError("unexpected block '" + blocks.begin()->first + "'");

  skeleton.init_records = std::move(model.init_records);
  return skeleton;
}

void save_model(const HybridModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::ios_base::failure("failed writing " + path.string());
}

HybridModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace sidecar
