#include "attnmamba/model.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace attnmamba {

std::string to_string(Precision p) { return p == Precision::kFloat32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& s) {
  if (s == "float32" || s == "f32" || s == "32") return Precision::kFloat32;
  if (s == "float64" || s == "f64" || s == "64") return Precision::kFloat64;
  throw std::invalid_argument("precision must be float32 or float64, got '" + s + "'");
}

void ModelConfig::validate() const {
  if (variates < 1) throw std::invalid_argument("variates (N) must be >= 1");
  if (lookback < 2) throw std::invalid_argument("lookback (L) must be >= 2 for instance normalization");
  if (horizon < 1) throw std::invalid_argument("horizon (T) must be >= 1");
  if (embed < 4 || embed % 4 != 0) {
    throw std::invalid_argument("embed_dim (E) must be a positive multiple of 4, got " + std::to_string(embed));
  }
  if (expansion < 1) throw std::invalid_argument("expansion (EF) must be >= 1");
  if (conv_width < 1) throw std::invalid_argument("conv_width (KS) must be >= 1");
  if (state_dim < 1) throw std::invalid_argument("state_dim (S) must be >= 1");
}

MambaConfig ModelConfig::mamba() const {
  MambaConfig m;
  m.embed = embed;
  m.expansion = expansion;
  m.conv_width = conv_width;
  m.state_dim = state_dim;
  m.dt_rank = dt_rank;
  return m;
}

template <typename T>
AttentionMambaModel<T>::AttentionMambaModel(const ModelConfig& cfg, std::uint64_t seed)
    : config((cfg.validate(), cfg)),
      revin(cfg.variates),
      embed("embed", cfg.lookback, cfg.embed),
      attn(cfg.variates, cfg.embed),
      mamba_fwd(cfg.mamba(), "mamba_fwd"),
      mamba_bwd(cfg.mamba(), "mamba_bwd"),
      head("head", cfg.embed, cfg.horizon) {
  std::mt19937_64 rng(seed);
  embed.init_uniform(rng);
  attn.init_uniform(rng);
  mamba_fwd.init(rng);
  mamba_bwd.init(rng);
  head.init_uniform(rng);
}

template <typename T>
ParamList<T> AttentionMambaModel<T>::parameters() {
  ParamList<T> out;
  revin.append_params(out);
  embed.append_params(out);
  attn.append_params(out);
  mamba_fwd.append_params(out);
  mamba_bwd.append_params(out);
  head.append_params(out);
  return out;
}

template <typename T>
std::size_t AttentionMambaModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : const_cast<AttentionMambaModel*>(this)->parameters()) n += p.tensor->numel();
  return n;
}

template <typename T>
ForwardResult<T> forward(Graph<T>& g, const AttentionMambaModel<T>& m, Var<T> x, const ForwardHooks& hooks) {
  const ModelConfig& cfg = m.config;
  const Shape xs = x.shape();
  if (xs.size() != 3 || xs[1] != cfg.lookback || xs[2] != cfg.variates) {
    throw ShapeError("model input must be [B, " + std::to_string(cfg.lookback) + ", " +
                     std::to_string(cfg.variates) + "], got " + shape_to_string(xs));
  }
  if (!x.value().all_finite()) throw std::invalid_argument("model input contains non-finite values");

  const BoundRevIn<T> revin = bind(g, m.revin);
  const BoundLinear<T> embed = bind(g, m.embed);
  const BoundPooledAttention<T> attn = bind(g, m.attn);
  const BoundMamba<T> fwd = bind(g, m.mamba_fwd);
  const BoundMamba<T> bwd = bind(g, m.mamba_bwd);
  const BoundLinear<T> head = bind(g, m.head);

  ForwardResult<T> out;
  RevInState<T> stats;
  Var<T> normalized = revin_normalize(x, revin, stats);
  Var<T> tokens = transpose(normalized);  // [B, N, L]
  Var<T> embedded = linear(tokens, embed);

  AttentionOutput<T> pooled = attention_weights(embedded, attn);
  Var<T> weights = pooled.weights;
  if (hooks.unit_weights) weights = g.constant(Tensor<T>::ones(weights.shape()));
  Var<T> value = bidirectional_mamba(embedded, fwd, bwd, cfg.bidirectional);
  if (weights.shape() != value.shape()) {
    throw ShapeError("fusion shape mismatch: weights " + shape_to_string(weights.shape()) + " vs value " +
                     shape_to_string(value.shape()));
  }
  Var<T> att = mul(weights, value);

  Var<T> projected = linear(att, head);  // [B, N, T]
  if (hooks.persistence_head) {
    const std::size_t batch = xs[0];
    Var<T> last = transpose(slice(normalized, 1, cfg.lookback - 1, cfg.lookback));  // [B, N, 1]
    projected = add_bcast(g.constant(Tensor<T>(Shape{batch, cfg.variates, cfg.horizon})), last);
  }
  out.prediction = revin_denormalize(transpose(projected), revin, stats);
  out.trace = std::move(pooled.trace);
  out.embedded = embedded.value();
  out.value = value.value();
  out.att = att.value();
  return out;
}

template <typename T>
Tensor<T> predict(const AttentionMambaModel<T>& m, const Tensor<T>& x) {
  Graph<T> g;
  return forward(g, m, g.constant(x)).prediction.value();
}

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.tensor;
  return nullptr;
}

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u32(bits);
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kConfigFields = 9;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  const ModelConfig& c = ck.config;
  w.u32(kConfigFields);
  w.u32(static_cast<std::uint32_t>(c.variates));
  w.u32(static_cast<std::uint32_t>(c.lookback));
  w.u32(static_cast<std::uint32_t>(c.horizon));
  w.u32(static_cast<std::uint32_t>(c.embed));
  w.u32(static_cast<std::uint32_t>(c.expansion));
  w.u32(static_cast<std::uint32_t>(c.conv_width));
  w.u32(static_cast<std::uint32_t>(c.state_dim));
  w.u32(static_cast<std::uint32_t>(c.mamba().resolved_dt_rank()));
  w.u32(c.bidirectional == BidirectionalMode::kLiteral ? 0u : 1u);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& nt : ck.tensors) {
    w.u32(static_cast<std::uint32_t>(nt.name.size()));
    w.raw(nt.name.data(), nt.name.size());
    w.u32(static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : nt.tensor.values()) w.f32(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.str(sizeof(kCheckpointMagic) - 1) != kCheckpointMagic) throw std::runtime_error("not an ATTNMAMBA1 checkpoint");
  if (r.u32() != kConfigFields) throw std::runtime_error("unsupported checkpoint config record");
  Checkpoint ck;
  ModelConfig& c = ck.config;
  c.variates = r.u32();
  c.lookback = r.u32();
  c.horizon = r.u32();
  c.embed = r.u32();
  c.expansion = r.u32();
  c.conv_width = r.u32();
  c.state_dim = r.u32();
  c.dt_rank = r.u32();
  c.bidirectional = r.u32() == 0 ? BidirectionalMode::kLiteral : BidirectionalMode::kConventional;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = r.f32();
    nt.tensor = Tensor<float>(std::move(shape), std::move(values));
    ck.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint records");
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <typename T>
Checkpoint make_checkpoint(AttentionMambaModel<T>& m, std::vector<NamedTensor> extra) {
  Checkpoint ck;
  ck.config = m.config;
  for (const auto& p : m.parameters()) ck.tensors.push_back({p.name, p.tensor->template cast<float>()});
  for (auto& e : extra) ck.tensors.push_back(std::move(e));
  return ck;
}

template <typename T>
AttentionMambaModel<T> model_from_checkpoint(const Checkpoint& ck) {
  AttentionMambaModel<T> m(ck.config, 0);
  for (auto& p : m.parameters()) {
    const Tensor<float>* t = ck.find(p.name);
    if (!t) throw std::runtime_error("checkpoint is missing parameter " + p.name);
    if (t->numel() != p.tensor->numel()) throw std::runtime_error("checkpoint parameter " + p.name + " has wrong size");
    *p.tensor = t->template cast<T>().reshaped(p.tensor->shape());
  }
  return m;
}

#define ATTNMAMBA_INSTANTIATE_MODEL(T)                                                                  \
  template struct AttentionMambaModel<T>;                                                              \
  template ForwardResult<T> forward(Graph<T>&, const AttentionMambaModel<T>&, Var<T>, const ForwardHooks&); \
  template Tensor<T> predict(const AttentionMambaModel<T>&, const Tensor<T>&);                         \
  template Checkpoint make_checkpoint(AttentionMambaModel<T>&, std::vector<NamedTensor>);              \
  template AttentionMambaModel<T> model_from_checkpoint(const Checkpoint&);

ATTNMAMBA_INSTANTIATE_MODEL(float)
ATTNMAMBA_INSTANTIATE_MODEL(double)

#undef ATTNMAMBA_INSTANTIATE_MODEL

}  // namespace attnmamba
