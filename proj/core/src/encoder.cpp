#include "portraitid/encoder.hpp"

#include <cmath>
#include <map>
#include <random>

#include "matrix_io.hpp"
#include "portraitid/error.hpp"
#include "portraitid/textio.hpp"

namespace portraitid {

namespace {

constexpr double kInitStd = 0.02;

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ContractError("encoder weight '" + name + "' has shape " + std::to_string(m.rows()) +
                        "x" + std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                        "x" + std::to_string(cols));
  }
  if (!m.all_finite()) throw ContractError("encoder weight '" + name + "' is not finite");
}

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, kInitStd);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

// Named views over every weight, in checkpoint order.
template <typename Weights, typename Fn>
void for_each_weight(Weights& w, Fn&& fn) {
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& L = w.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    fn(p + "wq", L.wq);
    fn(p + "wk", L.wk);
    fn(p + "wv", L.wv);
    fn(p + "wo", L.wo);
    fn(p + "w1", L.w1);
    fn(p + "w2", L.w2);
    fn(p + "ln1_gain", L.ln1_gain);
    fn(p + "ln1_bias", L.ln1_bias);
    fn(p + "ln2_gain", L.ln2_gain);
    fn(p + "ln2_bias", L.ln2_bias);
  }
  fn(std::string("final_gain"), w.final_gain);
  fn(std::string("final_bias"), w.final_bias);
  fn(std::string("projection"), w.projection);
}

Var project(Tape& tape, Var h, Var weight, std::span<const AdapterVars> adapters,
            std::size_t layer, LoraTarget target) {
  Var out = tape.matmul_nt(h, weight);
  for (const auto& ad : adapters) {
    if (ad.layer_index != layer || ad.target != target) continue;
    Var low = tape.matmul_nt(tape.matmul_nt(h, ad.a_down), ad.b_up);
    out = tape.add(out, tape.scale(low, ad.scale));
  }
  return out;
}

}  // namespace

void validate(const EncoderConfig& cfg) {
  if (cfg.n_layers < 1 || cfg.d_model < 1 || cfg.n_heads < 1 || cfg.d_ff < 1 ||
      cfg.seq_len < 1 || cfg.embed_dim < 1) {
    throw ContractError("encoder config counts must all be >= 1");
  }
  if (cfg.d_model % cfg.n_heads != 0) {
    throw ContractError("encoder d_model must be divisible by n_heads");
  }
}

void validate(const EncoderConfig& cfg, const EncoderWeights& w) {
  validate(cfg);
  if (w.layers.size() != cfg.n_layers) throw ContractError("encoder layer count mismatch");
  const std::size_t d = cfg.d_model;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    expect_shape(L.wq, d, d, p + "wq");
    expect_shape(L.wk, d, d, p + "wk");
    expect_shape(L.wv, d, d, p + "wv");
    expect_shape(L.wo, d, d, p + "wo");
    expect_shape(L.w1, cfg.d_ff, d, p + "w1");
    expect_shape(L.w2, d, cfg.d_ff, p + "w2");
    expect_shape(L.ln1_gain, 1, d, p + "ln1_gain");
    expect_shape(L.ln1_bias, 1, d, p + "ln1_bias");
    expect_shape(L.ln2_gain, 1, d, p + "ln2_gain");
    expect_shape(L.ln2_bias, 1, d, p + "ln2_bias");
  }
  expect_shape(w.final_gain, 1, d, "final_gain");
  expect_shape(w.final_bias, 1, d, "final_bias");
  expect_shape(w.projection, cfg.embed_dim, d, "projection");
}

std::size_t parameter_count(const EncoderConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t per_layer = 4 * d * d + 2 * cfg.d_ff * d + 4 * d;
  return cfg.n_layers * per_layer + 2 * d + cfg.embed_dim * d;
}

EncoderWeights init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.d_model;
  EncoderWeights w;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    EncoderLayer L;
    L.wq = gaussian(d, d, rng);
    L.wk = gaussian(d, d, rng);
    L.wv = gaussian(d, d, rng);
    L.wo = gaussian(d, d, rng);
    L.w1 = gaussian(cfg.d_ff, d, rng);
    L.w2 = gaussian(d, cfg.d_ff, rng);
    L.ln1_gain = Matrix(1, d, 1.0);
    L.ln1_bias = Matrix(1, d);
    L.ln2_gain = Matrix(1, d, 1.0);
    L.ln2_bias = Matrix(1, d);
    w.layers.push_back(std::move(L));
  }
  w.final_gain = Matrix(1, d, 1.0);
  w.final_bias = Matrix(1, d);
  w.projection = gaussian(cfg.embed_dim, d, rng);
  return w;
}

Matrix tokenize(std::span<const double> vec, const EncoderConfig& cfg) {
  const std::size_t capacity = cfg.seq_len * cfg.d_model;
  if (vec.size() > capacity) {
    throw ContractError("tokenize: vector of length " + std::to_string(vec.size()) +
                        " exceeds seq_len*d_model = " + std::to_string(capacity));
  }
  std::vector<double> data(capacity, 0.0);
  std::copy(vec.begin(), vec.end(), data.begin());
  return Matrix(cfg.seq_len, cfg.d_model, std::move(data));
}

EncoderVars bind_encoder(Tape& tape, const EncoderWeights& w, bool trainable) {
  EncoderVars v;
  for (const auto& L : w.layers) {
    v.layers.push_back({tape.leaf(L.wq, trainable), tape.leaf(L.wk, trainable),
                        tape.leaf(L.wv, trainable), tape.leaf(L.wo, trainable),
                        tape.leaf(L.w1, trainable), tape.leaf(L.w2, trainable),
                        tape.leaf(L.ln1_gain, trainable), tape.leaf(L.ln1_bias, trainable),
                        tape.leaf(L.ln2_gain, trainable), tape.leaf(L.ln2_bias, trainable)});
  }
  v.final_gain = tape.leaf(w.final_gain, trainable);
  v.final_bias = tape.leaf(w.final_bias, trainable);
  v.projection = tape.leaf(w.projection, trainable);
  return v;
}

std::vector<AdapterVars> bind_adapters(Tape& tape, const std::vector<LoraAdapter>& adapters,
                                       bool trainable) {
  std::vector<AdapterVars> out;
  for (const auto& ad : adapters) {
    validate(ad);
    out.push_back({tape.leaf(ad.a_down, trainable), tape.leaf(ad.b_up, trainable), ad.scale(),
                   ad.target, ad.layer_index});
  }
  return out;
}

Var encode_on_tape(Tape& tape, const EncoderConfig& cfg, const EncoderVars& w,
                   std::span<const AdapterVars> adapters, Var tokens) {
  validate(cfg);
  const Matrix& t = tape.value(tokens);
  if (t.rows() != cfg.seq_len || t.cols() != cfg.d_model) {
    throw ContractError("encode: tokens must be seq_len x d_model");
  }
  for (const auto& ad : adapters) {
    if (ad.layer_index >= cfg.n_layers) {
      throw ContractError("encode: adapter layer_index " + std::to_string(ad.layer_index) +
                          " out of range");
    }
  }
  const std::size_t dh = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var x = tokens;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& L = w.layers.at(l);
    Var h = tape.layer_norm_rows(x, L.ln1_gain, L.ln1_bias);
    Var q = project(tape, h, L.wq, adapters, l, LoraTarget::kQuery);
    Var k = tape.matmul_nt(h, L.wk);
    Var v = project(tape, h, L.wv, adapters, l, LoraTarget::kValue);
    std::vector<Var> heads;
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      Var qh = tape.slice_cols(q, hd * dh, dh);
      Var kh = tape.slice_cols(k, hd * dh, dh);
      Var vh = tape.slice_cols(v, hd * dh, dh);
      Var probs = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), attn_scale));
      heads.push_back(tape.matmul(probs, vh));
    }
    Var attn = tape.matmul_nt(heads.size() == 1 ? heads[0] : tape.concat_cols(heads), L.wo);
    x = tape.add(x, attn);

    Var h2 = tape.layer_norm_rows(x, L.ln2_gain, L.ln2_bias);
    Var ff = tape.matmul_nt(tape.gelu(tape.matmul_nt(h2, L.w1)), L.w2);
    x = tape.add(x, ff);
  }
  Var pooled = tape.layer_norm_rows(tape.mean_rows(x), w.final_gain, w.final_bias);
  return tape.l2_normalize_rows(tape.matmul_nt(pooled, w.projection));
}

std::vector<double> encode(const EncoderConfig& cfg, const EncoderWeights& weights,
                           const std::vector<LoraAdapter>& adapters, const Matrix& tokens) {
  validate(cfg, weights);
  Tape tape;
  const EncoderVars w = bind_encoder(tape, weights, false);
  const auto ads = bind_adapters(tape, adapters, false);
  for (const auto& ad : adapters) {
    if (ad.d_in() != cfg.d_model || ad.d_out() != cfg.d_model) {
      throw ContractError("encode: adapter shape does not match d_model");
    }
  }
  Var out = encode_on_tape(tape, cfg, w, ads, tape.constant(tokens));
  const auto values = tape.value(out).values();
  return {values.begin(), values.end()};
}

HeadWeights init_head(std::size_t d_in, std::size_t d_out, bool with_bias) {
  if (d_in < 1 || d_out < 1) throw ContractError("head dimensions must be >= 1");
  HeadWeights head;
  head.w_head = Matrix(d_out, d_in);
  for (std::size_t i = 0; i < std::min(d_in, d_out); ++i) head.w_head(i, i) = 1.0;
  if (with_bias) head.bias = Matrix(1, d_out);
  return head;
}

HeadVars bind_head(Tape& tape, const HeadWeights& head, bool trainable) {
  HeadVars v;
  v.w_head = tape.leaf(head.w_head, trainable);
  v.has_bias = head.has_bias();
  if (v.has_bias) v.bias = tape.leaf(head.bias, trainable);
  return v;
}

Var head_on_tape(Tape& tape, const HeadVars& head, Var backbone_row) {
  Var y = tape.matmul_nt(backbone_row, head.w_head);
  if (head.has_bias) y = tape.add_row(y, head.bias);
  return tape.l2_normalize_rows(y);
}

std::vector<double> head_forward(const HeadWeights& head, std::span<const double> backbone_vec) {
  if (backbone_vec.size() != head.d_in()) {
    throw ContractError("head_forward: input dimension " + std::to_string(backbone_vec.size()) +
                        " != " + std::to_string(head.d_in()));
  }
  Tape tape;
  const HeadVars v = bind_head(tape, head, false);
  Var out = head_on_tape(tape, v, tape.constant(Matrix::row_vector(backbone_vec)));
  const auto values = tape.value(out).values();
  return {values.begin(), values.end()};
}

std::string serialize_encoder(const EncoderConfig& cfg, const EncoderWeights& w) {
  validate(cfg, w);
  std::string out = "#encoder v1 n_layers=" + std::to_string(cfg.n_layers) +
                    " d_model=" + std::to_string(cfg.d_model) +
                    " n_heads=" + std::to_string(cfg.n_heads) +
                    " d_ff=" + std::to_string(cfg.d_ff) +
                    " seq_len=" + std::to_string(cfg.seq_len) +
                    " embed_dim=" + std::to_string(cfg.embed_dim) + '\n';
  for_each_weight(w, [&](const std::string& name, const Matrix& m) {
    out += detail::matrix_line(name, m);
  });
  return out;
}

std::pair<EncoderConfig, EncoderWeights> parse_encoder(std::string_view body) {
  auto lines = text::split(body, '\n');
  EncoderConfig cfg;
  try {
    for (auto [key, value] : detail::header_fields(lines[0], "#encoder v1")) {
      const auto n = static_cast<std::size_t>(text::parse_u64(value));
      if (key == "n_layers") {
        cfg.n_layers = n;
      } else if (key == "d_model") {
        cfg.d_model = n;
      } else if (key == "n_heads") {
        cfg.n_heads = n;
      } else if (key == "d_ff") {
        cfg.d_ff = n;
      } else if (key == "seq_len") {
        cfg.seq_len = n;
      } else if (key == "embed_dim") {
        cfg.embed_dim = n;
      } else {
        throw ContractError("unknown header field '" + std::string(key) + "'");
      }
    }
    validate(cfg);
  } catch (const ParseError&) {
    throw;
  } catch (const ContractError& e) {
    throw ParseError(e.what(), 1);
  }

  std::map<std::string, Matrix> found;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty() && ln + 1 == lines.size()) break;
    try {
      auto f = text::split(lines[ln], '\t');
      if (f.size() != 3) throw ContractError("expected 3 tab-separated fields");
      if (!found.emplace(std::string(f[0]), detail::parse_matrix(f[1], f[2])).second) {
        throw ContractError("duplicate weight '" + std::string(f[0]) + "'");
      }
    } catch (const ContractError& e) {
      throw ParseError(e.what(), ln + 1);
    }
  }
  EncoderWeights w;
  w.layers.resize(cfg.n_layers);
  for_each_weight(w, [&](const std::string& name, Matrix& m) {
    auto it = found.find(name);
    if (it == found.end()) throw ParseError("missing weight '" + name + "'", 0);
    m = std::move(it->second);
    found.erase(it);
  });
  if (!found.empty()) throw ParseError("unexpected weight '" + found.begin()->first + "'", 0);
  validate(cfg, w);
  return {cfg, std::move(w)};
}

std::string serialize_head(const HeadWeights& head) {
  std::string out = "#head v1 d_in=" + std::to_string(head.d_in()) +
                    " d_out=" + std::to_string(head.d_out()) +
                    " bias=" + (head.has_bias() ? "1" : "0") + '\n';
  out += detail::matrix_line("w_head", head.w_head);
  if (head.has_bias()) out += detail::matrix_line("bias", head.bias);
  return out;
}

HeadWeights parse_head(std::string_view body) {
  auto lines = text::split(body, '\n');
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  bool bias = false;
  try {
    for (auto [key, value] : detail::header_fields(lines[0], "#head v1")) {
      if (key == "d_in") {
        d_in = static_cast<std::size_t>(text::parse_u64(value));
      } else if (key == "d_out") {
        d_out = static_cast<std::size_t>(text::parse_u64(value));
      } else if (key == "bias") {
        bias = text::parse_u64(value) != 0;
      } else {
        throw ContractError("unknown header field '" + std::string(key) + "'");
      }
    }
  } catch (const ParseError&) {
    throw;
  } catch (const ContractError& e) {
    throw ParseError(e.what(), 1);
  }
  HeadWeights head;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty() && ln + 1 == lines.size()) break;
    try {
      auto f = text::split(lines[ln], '\t');
      if (f.size() != 3) throw ContractError("expected 3 tab-separated fields");
      Matrix m = detail::parse_matrix(f[1], f[2]);
      if (f[0] == "w_head") {
        head.w_head = std::move(m);
      } else if (f[0] == "bias") {
        head.bias = std::move(m);
      } else {
        throw ContractError("unknown weight '" + std::string(f[0]) + "'");
      }
    } catch (const ContractError& e) {
      throw ParseError(e.what(), ln + 1);
    }
  }
  if (head.w_head.rows() != d_out || head.w_head.cols() != d_in) {
    throw ParseError("w_head shape disagrees with header", 0);
  }
  if (bias != head.has_bias() || (bias && (head.bias.rows() != 1 || head.bias.cols() != d_out))) {
    throw ParseError("bias disagrees with header", 0);
  }
  return head;
}

}  // namespace portraitid
