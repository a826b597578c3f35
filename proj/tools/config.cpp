#include "config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "portraitid/error.hpp"
#include "portraitid/textio.hpp"

namespace portraitid::cli {

namespace {

namespace pt = boost::property_tree;

struct Field {
  std::string section;
  std::string key;
  std::function<void(std::string_view)> set;
  std::function<std::string()> get;
};

std::size_t to_count(std::string_view v) {
  return static_cast<std::size_t>(text::parse_u64(v));
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ContractError("expected a boolean, got '" + std::string(v) + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::optional<std::size_t> to_cap(std::string_view v) {
  if (v.empty() || v == "all") return std::nullopt;
  return to_count(v);
}

std::string from_cap(const std::optional<std::size_t>& cap) {
  return cap ? std::to_string(*cap) : "all";
}

std::vector<std::string> to_list(std::string_view v) {
  std::vector<std::string> out;
  if (text::trim(v).empty()) return out;
  for (auto item : text::split(v, ',')) out.emplace_back(text::trim(item));
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

template <typename T, typename Parse>
std::map<std::string, T> to_map(std::string_view v, Parse parse) {
  std::map<std::string, T> out;
  for (const auto& entry : to_list(v)) {
    const auto colon = entry.find(':');
    if (colon == std::string::npos) throw ContractError("expected tag:value, got '" + entry + "'");
    const std::string tag(text::trim(std::string_view(entry).substr(0, colon)));
    if (!out.emplace(tag, parse(text::trim(std::string_view(entry).substr(colon + 1)))).second) {
      throw ContractError("duplicate tag '" + tag + "'");
    }
  }
  return out;
}

template <typename T, typename Format>
std::string from_map(const std::map<std::string, T>& m, Format format) {
  std::vector<std::string> items;
  for (const auto& [tag, value] : m) items.push_back(tag + ":" + format(value));
  return join(items);
}

std::vector<Field> fields(RunConfig& c) {
  auto count = [](std::size_t& ref) {
    return std::pair{std::function<void(std::string_view)>([&ref](auto v) { ref = to_count(v); }),
                     std::function<std::string()>([&ref] { return std::to_string(ref); })};
  };
  auto real = [](double& ref) {
    return std::pair{
        std::function<void(std::string_view)>([&ref](auto v) { ref = text::parse_double(v); }),
        std::function<std::string()>([&ref] { return text::format_double(ref); })};
  };
  auto flag = [](bool& ref) {
    return std::pair{std::function<void(std::string_view)>([&ref](auto v) { ref = to_bool(v); }),
                     std::function<std::string()>([&ref] { return from_bool(ref); })};
  };
  auto word = [](std::string& ref) {
    return std::pair{std::function<void(std::string_view)>([&ref](auto v) { ref = v; }),
                     std::function<std::string()>([&ref] { return ref; })};
  };
  auto path = [](std::filesystem::path& ref) {
    return std::pair{std::function<void(std::string_view)>([&ref](auto v) { ref = v; }),
                     std::function<std::string()>([&ref] { return ref.string(); })};
  };
  auto cap = [](std::optional<std::size_t>& ref) {
    return std::pair{std::function<void(std::string_view)>([&ref](auto v) { ref = to_cap(v); }),
                     std::function<std::string()>([&ref] { return from_cap(ref); })};
  };
  auto make = [](std::string section, std::string key, auto accessors) {
    return Field{std::move(section), std::move(key), std::move(accessors.first),
                 std::move(accessors.second)};
  };

  std::vector<Field> f;
  f.push_back(make("paths", "manifest", path(c.manifest)));
  f.push_back(make("paths", "out", path(c.out_dir)));

  f.push_back(make("synth", "n_identities", count(c.synth.n_identities)));
  f.push_back(make("synth", "items_per_identity", count(c.synth.items_per_identity)));
  f.push_back(Field{"synth", "dims",
                    [&c](auto v) { c.synth.dim_per_source = to_map<std::size_t>(v, to_count); },
                    [&c] {
                      return from_map(c.synth.dim_per_source,
                                      [](std::size_t d) { return std::to_string(d); });
                    }});
  f.push_back(make("synth", "style_noise", real(c.synth.style_noise)));
  f.push_back(Field{"synth", "source_noise",
                    [&c](auto v) { c.synth.source_noise = to_map<double>(v, text::parse_double); },
                    [&c] { return from_map(c.synth.source_noise, text::format_double); }});
  f.push_back(make("synth", "style_rank", count(c.synth.style_rank)));

  f.push_back(make("split", "train", real(c.split.train)));
  f.push_back(make("split", "val", real(c.split.val)));
  f.push_back(make("split", "test", real(c.split.test)));

  f.push_back(make("pairs", "val_impostor_cap", cap(c.val_impostor_cap)));
  f.push_back(make("pairs", "test_impostor_cap", cap(c.test_impostor_cap)));

  f.push_back(make("encoder", "n_layers", count(c.encoder.n_layers)));
  f.push_back(make("encoder", "d_model", count(c.encoder.d_model)));
  f.push_back(make("encoder", "n_heads", count(c.encoder.n_heads)));
  f.push_back(make("encoder", "d_ff", count(c.encoder.d_ff)));
  f.push_back(make("encoder", "seq_len", count(c.encoder.seq_len)));
  f.push_back(make("encoder", "embed_dim", count(c.encoder.embed_dim)));

  f.push_back(make("train", "margin", real(c.train.margin)));
  f.push_back(make("train", "batch_size", count(c.train.batch_size)));
  f.push_back(make("train", "learning_rate", real(c.train.learning_rate)));
  f.push_back(make("train", "patience", count(c.train.patience)));
  f.push_back(make("train", "max_epochs", count(c.train.max_epochs)));
  f.push_back(make("train", "triplets_per_anchor", count(c.train.triplets_per_anchor)));
  f.push_back(Field{"train", "monitor",
                    [&c](auto v) {
                      if (v == "val_eer") {
                        c.train.monitor = Monitor::kValEer;
                      } else if (v == "train_loss") {
                        c.train.monitor = Monitor::kTrainLoss;
                      } else {
                        throw ContractError("expected val_eer or train_loss");
                      }
                    },
                    [&c] {
                      return std::string(c.train.monitor == Monitor::kValEer ? "val_eer"
                                                                             : "train_loss");
                    }});

  f.push_back(make("mining", "enabled", flag(c.train.mining.enabled)));
  f.push_back(make("mining", "hard_fraction", real(c.train.mining.hard_fraction)));
  f.push_back(make("mining", "top_pool", count(c.train.mining.top_pool)));
  f.push_back(make("mining", "next_pool", count(c.train.mining.next_pool)));

  f.push_back(make("adam", "beta1", real(c.train.adam.beta1)));
  f.push_back(make("adam", "beta2", real(c.train.adam.beta2)));
  f.push_back(make("adam", "eps", real(c.train.adam.eps)));

  f.push_back(make("lora", "source", word(c.lora_source)));
  f.push_back(make("lora", "rank", count(c.lora.rank)));
  f.push_back(make("lora", "alpha", real(c.lora.alpha)));

  f.push_back(make("head", "source", word(c.head_source)));
  f.push_back(make("head", "d_out", count(c.head_d_out)));
  f.push_back(make("head", "bias", flag(c.head_bias)));

  f.push_back(Field{"fusion", "systems", [&c](auto v) { c.fusions = to_list(v); },
                    [&c] { return join(c.fusions); }});

  f.push_back(Field{"eval", "far",
                    [&c](auto v) {
                      c.far_targets.clear();
                      for (const auto& item : to_list(v)) {
                        c.far_targets.push_back(text::parse_double(item));
                      }
                    },
                    [&c] { return text::format_values(c.far_targets); }});

  f.push_back(Field{"run", "seed", [&c](auto v) { c.seed = text::parse_u64(v); },
                    [&c] { return std::to_string(c.seed); }});
  return f;
}

void fail(const std::string& field, const std::string& message) {
  throw ConfigError(field + ": " + message);
}

}  // namespace

void RunConfig::propagate() {
  synth.seed = seed;
  train.seed = seed;
  train.val_impostor_cap = val_impostor_cap;
}

void validate(const RunConfig& cfg) {
  try {
    validate(cfg.synth);
  } catch (const ContractError& e) {
    fail("synth", e.what());
  }
  for (const auto& [name, ratio] :
       {std::pair{"split.train", cfg.split.train}, std::pair{"split.val", cfg.split.val},
        std::pair{"split.test", cfg.split.test}}) {
    if (!(ratio > 0.0) || !std::isfinite(ratio)) fail(name, "ratio must be positive");
  }
  const double sum = cfg.split.train + cfg.split.val + cfg.split.test;
  if (std::abs(sum - 1.0) > 1e-9) {
    fail("split.train+split.val+split.test", "ratios must sum to 1, got " + text::format_double(sum));
  }
  try {
    validate(cfg.encoder);
  } catch (const ContractError& e) {
    fail("encoder", e.what());
  }
  try {
    validate(cfg.train);
  } catch (const ContractError& e) {
    fail("train", e.what());
  }
  if (cfg.lora.rank == 0) fail("lora.rank", "must be >= 1");
  if (!(cfg.lora.alpha >= 0.0)) fail("lora.alpha", "must be >= 0");
  if (cfg.lora_source.empty()) fail("lora.source", "must name a source");
  if (cfg.head_source.empty()) fail("head.source", "must name a source");
  if (cfg.lora_source == cfg.head_source) fail("head.source", "must differ from lora.source");
  if (cfg.far_targets.empty()) fail("eval.far", "needs at least one target");
  for (double t : cfg.far_targets) {
    if (!(t > 0.0 && t < 1.0)) fail("eval.far", "targets must lie in (0, 1)");
  }
  for (const auto& name : cfg.fusions) {
    if (name.find('+') == std::string::npos) fail("fusion.systems", "'" + name + "' fuses nothing");
  }
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig cfg;
  auto table = fields(cfg);
  for (const auto& [section, entries] : tree) {
    if (!entries.data().empty()) fail(section, "top-level keys are not allowed; use [sections]");
    if (std::none_of(table.begin(), table.end(),
                     [&](const Field& f) { return f.section == section; })) {
      fail(section, "unknown section");
    }
    for (const auto& [key, node] : entries) {
      const std::string name = section + "." + key;
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) fail(name, "unknown setting");
      try {
        it->set(text::trim(node.data()));
      } catch (const ContractError& e) {
        fail(name, e.what());
      }
    }
  }
  cfg.propagate();
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  return parse_config(text::read_file(path));
}

std::string render_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out;
  std::string section;
  for (const auto& f : fields(copy)) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

std::string base_tag(const std::string& source) { return source + "-base"; }
std::string lora_tag(const std::string& source) { return source + "-lora"; }
std::string tuned_tag(const std::string& source) { return source + "-tuned"; }

}  // namespace portraitid::cli
