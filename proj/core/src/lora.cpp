#include "portraitid/lora.hpp"

#include <cmath>
#include <random>

#include "matrix_io.hpp"
#include "portraitid/encoder.hpp"
#include "portraitid/error.hpp"
#include "portraitid/textio.hpp"

namespace portraitid {

std::string_view to_string(LoraTarget target) {
  return target == LoraTarget::kQuery ? "q" : "v";
}

LoraTarget parse_lora_target(std::string_view name) {
  if (name == "q") return LoraTarget::kQuery;
  if (name == "v") return LoraTarget::kValue;
  throw ContractError("unknown LoRA target '" + std::string(name) + "'");
}

void validate(const LoraAdapter& ad) {
  if (ad.rank < 1) throw ContractError("LoRA rank must be >= 1");
  if (ad.a_down.rows() != ad.rank || ad.b_up.cols() != ad.rank) {
    throw ContractError("LoRA factor shapes disagree with rank " + std::to_string(ad.rank));
  }
  if (ad.rank > std::min(ad.d_in(), ad.d_out())) {
    throw ContractError("LoRA rank " + std::to_string(ad.rank) + " exceeds min(d_in, d_out)");
  }
  if (!(ad.alpha > 0.0)) throw ContractError("LoRA alpha must be positive");
}

LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha,
                         std::uint64_t seed, LoraTarget target, std::size_t layer_index) {
  if (rank < 1 || rank > std::min(d_in, d_out)) {
    throw ContractError("LoRA rank " + std::to_string(rank) + " outside [1, min(" +
                        std::to_string(d_in) + ", " + std::to_string(d_out) + ")]");
  }
  if (!(alpha > 0.0)) throw ContractError("LoRA alpha must be positive");
  LoraAdapter ad;
  ad.rank = rank;
  ad.alpha = alpha;
  ad.target = target;
  ad.layer_index = layer_index;
  ad.a_down = Matrix(rank, d_in);
  ad.b_up = Matrix(d_out, rank);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
  for (double& v : ad.a_down.values()) v = gauss(rng);
  return ad;
}

Matrix adapter_delta(const LoraAdapter& ad) {
  validate(ad);
  return scaled(matmul(ad.b_up, ad.a_down), ad.scale());
}

Matrix adapted_forward(const Matrix& w_base, const LoraAdapter& ad, const Matrix& x) {
  validate(ad);
  if (w_base.rows() != ad.d_out() || w_base.cols() != ad.d_in()) {
    throw ContractError("adapted_forward: base weight shape does not match adapter");
  }
  Matrix base = matmul(w_base, x);
  const Matrix low = matmul(ad.b_up, matmul(ad.a_down, x));
  const double s = ad.scale();
  auto dst = base.values();
  auto src = low.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
  return base;
}

Matrix merge(const Matrix& w_base, const LoraAdapter& ad) {
  if (w_base.rows() != ad.d_out() || w_base.cols() != ad.d_in()) {
    throw ContractError("merge: base weight shape does not match adapter");
  }
  return add(w_base, adapter_delta(ad));
}

ParamCount trainable_param_count(const std::vector<LoraAdapter>& adapters,
                                 const EncoderConfig& cfg) {
  validate(cfg);
  ParamCount count;
  for (const auto& ad : adapters) {
    validate(ad);
    if (ad.layer_index >= cfg.n_layers || ad.d_in() != cfg.d_model || ad.d_out() != cfg.d_model) {
      throw ContractError("adapter does not fit the encoder shape");
    }
    count.trainable += ad.rank * (ad.d_in() + ad.d_out());
  }
  count.encoder_total = parameter_count(cfg);
  count.ratio = static_cast<double>(count.trainable) / static_cast<double>(count.encoder_total);
  return count;
}

std::vector<LoraAdapter> init_qv_adapters(const EncoderConfig& cfg, std::size_t rank, double alpha,
                                          std::uint64_t seed) {
  validate(cfg);
  std::vector<LoraAdapter> adapters;
  std::mt19937_64 seeds(seed);
  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    for (auto target : {LoraTarget::kQuery, LoraTarget::kValue}) {
      adapters.push_back(
          init_adapter(cfg.d_model, cfg.d_model, rank, alpha, seeds(), target, layer));
    }
  }
  return adapters;
}

std::string serialize_adapters(const std::vector<LoraAdapter>& adapters, std::size_t n_layers) {
  const std::size_t rank = adapters.empty() ? 0 : adapters.front().rank;
  const double alpha = adapters.empty() ? 0.0 : adapters.front().alpha;
  std::string out = "#lora v1 layers=" + std::to_string(n_layers) + " rank=" +
                    std::to_string(rank) + " alpha=" + text::format_double(alpha) + '\n';
  for (const auto& ad : adapters) {
    validate(ad);
    if (ad.rank != rank || ad.alpha != alpha) {
      throw ContractError("adapter checkpoint requires one shared rank and alpha");
    }
    const std::string key =
        std::to_string(ad.layer_index) + '\t' + std::string(to_string(ad.target));
    out += detail::matrix_line(key + "\ta_down", ad.a_down);
    out += detail::matrix_line(key + "\tb_up", ad.b_up);
  }
  return out;
}

std::vector<LoraAdapter> parse_adapters(std::string_view body) {
  auto lines = text::split(body, '\n');
  std::size_t n_layers = 0;
  std::size_t rank = 0;
  double alpha = 0.0;
  try {
    for (auto [key, value] : detail::header_fields(lines[0], "#lora v1")) {
      if (key == "layers") {
        n_layers = static_cast<std::size_t>(text::parse_u64(value));
      } else if (key == "rank") {
        rank = static_cast<std::size_t>(text::parse_u64(value));
      } else if (key == "alpha") {
        alpha = text::parse_double(value);
      } else {
        throw ContractError("unknown header field '" + std::string(key) + "'");
      }
    }
  } catch (const ParseError&) {
    throw;
  } catch (const ContractError& e) {
    throw ParseError(e.what(), 1);
  }

  std::vector<LoraAdapter> adapters;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty() && ln + 1 == lines.size()) break;
    try {
      auto f = text::split(lines[ln], '\t');
      if (f.size() != 5) throw ContractError("expected 5 tab-separated fields");
      const auto layer = static_cast<std::size_t>(text::parse_u64(f[0]));
      const auto target = parse_lora_target(f[1]);
      Matrix m = detail::parse_matrix(f[3], f[4]);
      if (layer >= n_layers) throw ContractError("layer index out of range");
      if (f[2] == "a_down") {
        LoraAdapter ad;
        ad.layer_index = layer;
        ad.target = target;
        ad.rank = rank;
        ad.alpha = alpha;
        ad.a_down = std::move(m);
        adapters.push_back(std::move(ad));
      } else if (f[2] == "b_up") {
        if (adapters.empty() || adapters.back().layer_index != layer ||
            adapters.back().target != target || !adapters.back().b_up.empty()) {
          throw ContractError("b_up without matching a_down");
        }
        adapters.back().b_up = std::move(m);
        validate(adapters.back());
      } else {
        throw ContractError("unknown factor '" + std::string(f[2]) + "'");
      }
    } catch (const ContractError& e) {
      throw ParseError(e.what(), ln + 1);
    }
  }
  for (const auto& ad : adapters) {
    if (ad.b_up.empty()) throw ParseError("adapter missing b_up", 0);
  }
  return adapters;
}

void save_adapters(const std::vector<LoraAdapter>& adapters, std::size_t n_layers,
                   const std::filesystem::path& path) {
  text::write_file(path, serialize_adapters(adapters, n_layers));
}

std::vector<LoraAdapter> load_adapters(const std::filesystem::path& path) {
  return parse_adapters(text::read_file(path));
}

}  // namespace portraitid
