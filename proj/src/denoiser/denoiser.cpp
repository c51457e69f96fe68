// SPDX-License-Identifier: Apache-2.0

#include "m3d/denoiser.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "m3d/ops.hpp"
#include "m3d/random.hpp"

namespace m3d {

namespace {

[[noreturn]] void config_error(const std::string& what) { throw std::invalid_argument("denoiser config: " + what); }

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    config_error("value of '" + key + "' is not a number: '" + value + "'");
  }
  if (used != value.size() || value.empty() || value[0] == '-') {
    config_error("value of '" + key + "' is not a number: '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

void DenoiserConfig::validate() const {
  if (frames < 2) config_error("frames must be at least 2");
  if (channels == 0) config_error("channels must be positive");
  if (widths.empty()) config_error("at least one width level is required");
  for (auto w : widths) {
    if (w == 0) config_error("widths must be positive");
    if (groups == 0 || w % groups != 0) config_error("groups must divide every width");
  }
  if (size == 0 || size % 4 != 0) config_error("size must be a positive multiple of 4");
  if (size % (std::size_t{1} << (widths.size() - 1)) != 0) config_error("size must halve cleanly at every level");
  if (token_dim == 0 || heads == 0 || token_dim % heads != 0) config_error("token_dim must be divisible by heads");
  if (global_frames == 0) config_error("global_frames must be positive");
  if (embed_dim == 0 || embed_dim % 2 != 0) config_error("embed_dim must be even and positive");
  if (train_steps < 2) config_error("train_steps must be at least 2");
}

std::string DenoiserConfig::to_header() const {
  std::ostringstream os;
  os << "frames=" << frames << '\n' << "size=" << size << '\n' << "channels=" << channels << '\n' << "widths=";
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  os << '\n'
     << "token_dim=" << token_dim << '\n'
     << "heads=" << heads << '\n'
     << "global_frames=" << global_frames << '\n'
     << "groups=" << groups << '\n'
     << "embed_dim=" << embed_dim << '\n'
     << "train_steps=" << train_steps << '\n';
  return os.str();
}

DenoiserConfig DenoiserConfig::from_header(const std::string& header) {
  DenoiserConfig c;
  std::map<std::string, std::size_t*> fields = {
      {"frames", &c.frames},       {"size", &c.size},     {"channels", &c.channels},
      {"token_dim", &c.token_dim}, {"heads", &c.heads},   {"global_frames", &c.global_frames},
      {"groups", &c.groups},       {"embed_dim", &c.embed_dim}, {"train_steps", &c.train_steps}};
  std::istringstream in(header);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_error("malformed header line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "widths") {
      c.widths.clear();
      std::istringstream ws(value);
      std::string item;
      while (std::getline(ws, item, ',')) c.widths.push_back(parse_count(key, item));
    } else if (auto it = fields.find(key); it != fields.end()) {
      *it->second = parse_count(key, value);
    } else {
      config_error("unknown header key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

DenoiserConfig DenoiserConfig::miniature() {
  DenoiserConfig c;
  c.frames = 3;
  c.size = 4;
  c.channels = 1;
  c.widths = {2, 4};
  c.token_dim = 4;
  c.heads = 2;
  c.global_frames = 2;
  c.groups = 2;
  c.embed_dim = 4;
  return c;
}

template <typename T>
BasicDenoiser<T>::BasicDenoiser(DenoiserConfig config, BasicParamStore<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  // Every expected parameter must be present with the expected shape.
  const auto reference = BasicDenoiser<T>::init(config_, 0);
  if (reference.params_.size() != params_.size()) {
    throw std::invalid_argument("denoiser: expected " + std::to_string(reference.params_.size()) +
                                " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (const auto& [name, t] : reference.params_) {
    if (!params_.contains(name)) throw std::invalid_argument("denoiser: missing parameter '" + name + "'");
    if (params_.get(name).shape() != t.shape()) {
      throw std::invalid_argument("denoiser: parameter '" + name + "' has shape " +
                                  shape_str(params_.get(name).shape()) + ", expected " + shape_str(t.shape()));
    }
  }
}

namespace {

template <typename T>
class Builder {
 public:
  Builder(BasicParamStore<T>& store, Rng& rng) : store_(store), rng_(rng) {}

  void normal(const std::string& name, Shape shape, double stddev) {
    auto t = randn<T>(std::move(shape), rng_);
    for (auto& v : t.mutable_data()) v = static_cast<T>(v * stddev);
    store_.add(name, t);
  }
  void constant(const std::string& name, Shape shape, double value) {
    store_.add(name, BasicTensor<T>::full(std::move(shape), static_cast<T>(value)));
  }
  void conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, double gain = 1.0) {
    normal(name + ".w", {cout, cin, k, k}, gain / std::sqrt(static_cast<double>(cin * k * k)));
    constant(name + ".b", {cout}, 0.0);
  }
  // Starts close to the identity along time so the spatial path trains first.
  void temporal(const std::string& name, std::size_t c) {
    auto t = randn<T>({c, c, 3}, rng_);
    for (auto& v : t.mutable_data()) v = static_cast<T>(v * 0.02);
    for (std::size_t i = 0; i < c; ++i) t.mutable_data()[(i * c + i) * 3 + 1] += T(1);
    store_.add(name + ".w", t);
    constant(name + ".b", {c}, 0.0);
  }
  void linear(const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
    normal(name + ".w", {in, out}, gain / std::sqrt(static_cast<double>(in)));
    constant(name + ".b", {out}, 0.0);
  }
  void norm(const std::string& name, std::size_t c) {
    constant(name + ".gamma", {c}, 1.0);
    constant(name + ".beta", {c}, 0.0);
  }
  void block(const std::string& name, std::size_t cin, std::size_t cout, std::size_t embed) {
    norm(name + ".norm", cin);
    conv(name + ".conv", cin, cout, 3);
    temporal(name + ".tconv", cout);
    linear(name + ".t_proj", embed, cout, 0.5);
    linear(name + ".fps_proj", embed, cout, 0.5);
    if (cin != cout) conv(name + ".skip", cin, cout, 1);
  }

 private:
  BasicParamStore<T>& store_;
  Rng& rng_;
};

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

// (B, n, d) -> (B * heads, n, d / heads)
template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, std::size_t heads) {
  if (heads == 1) return x;
  const auto b = x.dim(0), n = x.dim(1), d = x.dim(2);
  auto y = permute(reshape(x, Shape{b, n, heads, d / heads}), {0, 2, 1, 3});
  return reshape(y, Shape{b * heads, n, d / heads});
}

template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x, std::size_t heads) {
  if (heads == 1) return x;
  const auto bh = x.dim(0), n = x.dim(1), dh = x.dim(2);
  auto y = permute(reshape(x, Shape{bh / heads, heads, n, dh}), {0, 2, 1, 3});
  return reshape(y, Shape{bh / heads, n, heads * dh});
}

}  // namespace

template <typename T>
BasicDenoiser<T> BasicDenoiser<T>::init(const DenoiserConfig& config, std::uint64_t seed) {
  config.validate();
  BasicParamStore<T> store;
  Rng rng = make_rng(seed, 0x64656e6f);
  Builder<T> b(store, rng);
  const auto& w = config.widths;
  const auto levels = w.size();
  const auto e = config.embed_dim, d = config.token_dim;

  b.conv("in_conv", config.input_channels(), w[0], 3);
  for (std::size_t i = 0; i < levels; ++i) {
    b.block("down" + std::to_string(i), w[i], w[i], e);
    if (i + 1 < levels) b.conv("down" + std::to_string(i) + ".pool", w[i], w[i + 1], 3);
  }
  const auto wm = w.back();
  b.block("mid", wm, wm, e);
  b.norm("mid.tattn.norm", wm);
  for (const char* m : {"q", "k", "v"}) b.linear(std::string("mid.tattn.") + m, wm, d);
  b.linear("mid.tattn.out", d, wm, 0.5);
  b.norm("mid.xattn.norm", wm);
  b.linear("mid.xattn.q", wm, d);
  b.linear("mid.xattn.k", d, d);
  b.linear("mid.xattn.v", d, d);
  b.linear("mid.xattn.out", d, wm, 0.5);
  for (std::size_t i = levels; i-- > 0;) {
    b.block("up" + std::to_string(i), 2 * w[i], w[i], e);
    if (i > 0) b.conv("up" + std::to_string(i) + ".unpool", w[i], w[i - 1], 3);
  }
  b.norm("out.norm", w[0]);
  b.conv("out.conv", w[0], config.channels, 3, 0.0);

  b.conv("prompt.conv0", config.channels + 1, w[0], 3);
  b.conv("prompt.conv1", w[0], d, 3);
  return BasicDenoiser(config, std::move(store), 0);
}

template <typename T>
BasicDenoiser<T>::BasicDenoiser(DenoiserConfig config, BasicParamStore<T> params, int)
    : config_(std::move(config)), params_(std::move(params)) {}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::encode_prompt(const BasicTensor<T>& global_prompt) const {
  const auto& c = config_;
  const Shape expected{c.global_frames, c.channels + 1, c.size, c.size};
  if (global_prompt.shape() != expected) {
    throw std::invalid_argument("encode_prompt: global prompt " + shape_str(global_prompt.shape()) + ", expected " +
                                shape_str(expected));
  }
  auto h = silu(conv2d(global_prompt, p("prompt.conv0.w"), p("prompt.conv0.b"), 2));
  h = conv2d(h, p("prompt.conv1.w"), p("prompt.conv1.b"), 2);  // (g, d, H/4, W/4)
  h = permute(h, {0, 2, 3, 1});
  return reshape(h, Shape{1, c.prompt_tokens(), c.token_dim});
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::block(const std::string& name, const BasicTensor<T>& x, const BasicTensor<T>& t_emb,
                                       const BasicTensor<T>& fps_emb) const {
  auto h = silu(group_norm(x, p(name + ".norm.gamma"), p(name + ".norm.beta"), config_.groups));
  h = conv2d(h, p(name + ".conv.w"), p(name + ".conv.b"));
  h = temporal_conv(h, p(name + ".tconv.w"), p(name + ".tconv.b"));
  const auto cout = h.dim(1);
  auto emb = add(linear(t_emb, p(name + ".t_proj.w"), p(name + ".t_proj.b")),
                 linear(fps_emb, p(name + ".fps_proj.w"), p(name + ".fps_proj.b")));
  h = add_channel(h, reshape(emb, Shape{cout}));
  const std::string skip = name + ".skip";
  const auto residual = params_.contains(skip + ".w") ? conv2d(x, p(skip + ".w"), p(skip + ".b")) : x;
  return add(h, residual);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::temporal_attention(const BasicTensor<T>& x) const {
  const auto f = x.dim(0), c = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  const auto d = config_.token_dim, heads = config_.heads;
  auto h = group_norm(x, p("mid.tattn.norm.gamma"), p("mid.tattn.norm.beta"), config_.groups);
  // One sequence of F tokens per spatial position.
  auto tokens = reshape(permute(h, {2, 3, 0, 1}), Shape{hh * ww * f, c});
  auto proj = [&](const char* m) {
    const std::string n = std::string("mid.tattn.") + m;
    return split_heads(reshape(linear(tokens, p(n + ".w"), p(n + ".b")), Shape{hh * ww, f, d}), heads);
  };
  auto a = merge_heads(attention(proj("q"), proj("k"), proj("v")), heads);
  auto out = linear(reshape(a, Shape{hh * ww * f, d}), p("mid.tattn.out.w"), p("mid.tattn.out.b"));
  out = permute(reshape(out, Shape{hh, ww, f, c}), {2, 3, 0, 1});
  return add(x, out);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::cross_attention(const BasicTensor<T>& x, const BasicTensor<T>& tokens) const {
  const auto f = x.dim(0), c = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  const auto d = config_.token_dim, heads = config_.heads, m = tokens.dim(1);
  auto h = group_norm(x, p("mid.xattn.norm.gamma"), p("mid.xattn.norm.beta"), config_.groups);
  auto queries = reshape(permute(h, {0, 2, 3, 1}), Shape{f * hh * ww, c});
  auto q = reshape(linear(queries, p("mid.xattn.q.w"), p("mid.xattn.q.b")), Shape{1, f * hh * ww, d});
  auto flat = reshape(tokens, Shape{m, d});
  auto k = reshape(linear(flat, p("mid.xattn.k.w"), p("mid.xattn.k.b")), Shape{1, m, d});
  auto v = reshape(linear(flat, p("mid.xattn.v.w"), p("mid.xattn.v.b")), Shape{1, m, d});
  auto a = merge_heads(attention(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)), heads);
  auto out = linear(reshape(a, Shape{f * hh * ww, d}), p("mid.xattn.out.w"), p("mid.xattn.out.b"));
  out = permute(reshape(out, Shape{f, hh, ww, c}), {0, 3, 1, 2});
  return add(x, out);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::forward(const BasicTensor<T>& input, double t, double fps,
                                         const BasicTensor<T>& tokens) const {
  const auto& c = config_;
  // Windows shorter than the configured clip occur at the coarsest plan
  // levels; the network is convolutional along time so they run unchanged.
  if (input.rank() != 4 || input.dim(0) < 1 || input.dim(0) > c.frames || input.dim(1) != c.input_channels() ||
      input.dim(2) != c.size || input.dim(3) != c.size) {
    throw std::invalid_argument("predict_noise: input " + shape_str(input.shape()) + ", expected (<=" +
                                std::to_string(c.frames) + ", " + std::to_string(c.input_channels()) + ", " +
                                std::to_string(c.size) + ", " + std::to_string(c.size) + ")");
  }
  const Shape token_shape{1, c.prompt_tokens(), c.token_dim};
  if (tokens.shape() != token_shape) {
    throw std::invalid_argument("predict_noise: prompt tokens " + shape_str(tokens.shape()) + ", expected " +
                                shape_str(token_shape));
  }
  const double tv[1] = {t}, fv[1] = {fps};
  const auto t_emb = sinusoidal_embedding<T>(tv, c.embed_dim);
  const auto fps_emb = sinusoidal_embedding<T>(fv, c.embed_dim);

  const auto levels = c.widths.size();
  auto h = conv2d(input, p("in_conv.w"), p("in_conv.b"));
  std::vector<BasicTensor<T>> skips;
  for (std::size_t i = 0; i < levels; ++i) {
    const auto name = "down" + std::to_string(i);
    h = block(name, h, t_emb, fps_emb);
    skips.push_back(h);
    if (i + 1 < levels) h = conv2d(h, p(name + ".pool.w"), p(name + ".pool.b"), 2);
  }
  h = block("mid", h, t_emb, fps_emb);
  h = temporal_attention(h);
  h = cross_attention(h, tokens);
  for (std::size_t i = levels; i-- > 0;) {
    const auto name = "up" + std::to_string(i);
    h = block(name, concat(h, skips[i], 1), t_emb, fps_emb);
    // Channel reduction runs before the resize, at a quarter of the cost.
    if (i > 0) h = upsample_nearest2x(conv2d(h, p(name + ".unpool.w"), p(name + ".unpool.b")));
  }
  h = silu(group_norm(h, p("out.norm.gamma"), p("out.norm.beta"), c.groups));
  return conv2d(h, p("out.conv.w"), p("out.conv.b"));
}

Tensor predict_noise(const Denoiser& model, const ClipConditioning& cond, std::size_t t, const Tensor& tokens) {
  if (t < 1 || t > model.config().train_steps) {
    throw std::invalid_argument("predict_noise: timestep " + std::to_string(t) + " outside 1.." +
                                std::to_string(model.config().train_steps));
  }
  return model.forward(cond.network_input(), static_cast<double>(t), static_cast<double>(cond.fps), tokens);
}

template class BasicDenoiser<float>;
template class BasicDenoiser<double>;

}  // namespace m3d
