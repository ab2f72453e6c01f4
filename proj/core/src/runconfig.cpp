#include "dlv3/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dlv3 {

bool RunConfig::operator==(const RunConfig& other) const {
  return train_manifest == other.train_manifest && val_manifest == other.val_manifest &&
         seed == other.seed && arch == other.arch && train == other.train &&
         eval == other.eval;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value,
                      const std::string& expected) {
  throw std::invalid_argument("config: key '" + key + "': cannot parse '" + value +
                              "' as " + expected);
}

long long parse_i(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long r = std::stoll(v, &used);
    if (used != v.size()) bad(key, v, "an integer");
    return r;
  } catch (const std::invalid_argument&) {
    bad(key, v, "an integer");
  } catch (const std::out_of_range&) {
    bad(key, v, "an integer");
  }
}

double parse_d(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double r = std::stod(v, &used);
    if (used != v.size()) bad(key, v, "a number");
    return r;
  } catch (const std::exception&) {
    bad(key, v, "a number");
  }
}

bool parse_b(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "a boolean (true/false)");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& v, F item) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(item(key, trim(tok)));
  return out;
}

std::string fmt_d(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(T)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += f(v[i]);
  }
  return out;
}

std::string join_i(const std::vector<int>& v) {
  return join<int>(v, [](int x) { return std::to_string(x); });
}
std::string join_d(const std::vector<double>& v) { return join<double>(v, fmt_d); }

struct KeyDef {
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string bn_to_string(BnMode m) { return m == BnMode::Train ? "train" : "frozen"; }

BnMode bn_from_string(const std::string& key, const std::string& v) {
  if (v == "train") return BnMode::Train;
  if (v == "frozen") return BnMode::Frozen;
  bad(key, v, "a BN mode (train/frozen)");
}

std::vector<KeyDef> key_table() {
  std::vector<KeyDef> keys;
  auto add = [&](std::string name, std::string doc, auto set, auto get) {
    keys.push_back({std::move(name), std::move(doc), set, get});
  };

  add("dataset.train_manifest", "path to the training manifest",
      [](RunConfig& c, const std::string& v) { c.train_manifest = v; },
      [](const RunConfig& c) { return c.train_manifest; });
  add("dataset.val_manifest", "path to the validation manifest",
      [](RunConfig& c, const std::string& v) { c.val_manifest = v; },
      [](const RunConfig& c) { return c.val_manifest; });
  add("seed", "master seed for weight init, augmentation and shuffling",
      [](RunConfig& c, const std::string& v) {
        c.seed = static_cast<std::uint64_t>(parse_i("seed", v));
      },
      [](const RunConfig& c) { return std::to_string(c.seed); });

  add("model.num_classes", "number of classes incl. background",
      [](RunConfig& c, const std::string& v) {
        c.arch.aspp.num_classes = static_cast<int>(parse_i("model.num_classes", v));
      },
      [](const RunConfig& c) { return std::to_string(c.arch.aspp.num_classes); });
  add("network.stem_channels", "stem conv output channels",
      [](RunConfig& c, const std::string& v) {
        c.arch.stem_channels = static_cast<int>(parse_i("network.stem_channels", v));
      },
      [](const RunConfig& c) { return std::to_string(c.arch.stem_channels); });
  add("network.block_channels", "channel widths of the base residual blocks",
      [](RunConfig& c, const std::string& v) {
        c.arch.block_channels = parse_list<int>("network.block_channels", v,
                                                [](const std::string& k, const std::string& t) {
                                                  return static_cast<int>(parse_i(k, t));
                                                });
      },
      [](const RunConfig& c) { return join_i(c.arch.block_channels); });
  add("network.extra_blocks", "replicas of the last block appended in cascade",
      [](RunConfig& c, const std::string& v) {
        c.arch.extra_blocks = static_cast<int>(parse_i("network.extra_blocks", v));
      },
      [](const RunConfig& c) { return std::to_string(c.arch.extra_blocks); });
  add("network.multi_grid", "unit rates of the last block and its replicas",
      [](RunConfig& c, const std::string& v) {
        auto r = parse_list<int>("network.multi_grid", v,
                                 [](const std::string& k, const std::string& t) {
                                   return static_cast<int>(parse_i(k, t));
                                 });
        if (r.size() != 3) bad("network.multi_grid", v, "three comma-separated rates");
        c.arch.multi_grid = {r[0], r[1], r[2]};
      },
      [](const RunConfig& c) {
        return join_i({c.arch.multi_grid[0], c.arch.multi_grid[1], c.arch.multi_grid[2]});
      });

  add("aspp.rates", "base rates of the 3x3 branches (at output_stride 16)",
      [](RunConfig& c, const std::string& v) {
        c.arch.aspp.base_rates = parse_list<int>("aspp.rates", v,
                                                 [](const std::string& k, const std::string& t) {
                                                   return static_cast<int>(parse_i(k, t));
                                                 });
      },
      [](const RunConfig& c) { return join_i(c.arch.aspp.base_rates); });
  add("aspp.filters", "filters per branch",
      [](RunConfig& c, const std::string& v) {
        c.arch.aspp.branch_filters = static_cast<int>(parse_i("aspp.filters", v));
      },
      [](const RunConfig& c) { return std::to_string(c.arch.aspp.branch_filters); });
  add("aspp.image_pooling", "include the image-level feature branch",
      [](RunConfig& c, const std::string& v) {
        c.arch.aspp.image_pooling = parse_b("aspp.image_pooling", v);
      },
      [](const RunConfig& c) { return c.arch.aspp.image_pooling ? "true" : "false"; });
  add("aspp.extra_rate_24", "add the optional fourth 3x3 branch at rate 24",
      [](RunConfig& c, const std::string& v) {
        c.arch.aspp.extra_rate_24 = parse_b("aspp.extra_rate_24", v);
      },
      [](const RunConfig& c) { return c.arch.aspp.extra_rate_24 ? "true" : "false"; });

  add("train.crop", "training crop size (N*output_stride+1)",
      [](RunConfig& c, const std::string& v) {
        c.train.crop_size = static_cast<int>(parse_i("train.crop", v));
      },
      [](const RunConfig& c) { return std::to_string(c.train.crop_size); });
  add("train.batch", "batch size",
      [](RunConfig& c, const std::string& v) {
        c.train.batch_size = static_cast<int>(parse_i("train.batch", v));
      },
      [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
  add("train.power", "poly learning-rate exponent",
      [](RunConfig& c, const std::string& v) { c.train.power = parse_d("train.power", v); },
      [](const RunConfig& c) { return fmt_d(c.train.power); });
  add("train.momentum", "SGD momentum",
      [](RunConfig& c, const std::string& v) {
        c.train.momentum = parse_d("train.momentum", v);
      },
      [](const RunConfig& c) { return fmt_d(c.train.momentum); });
  add("train.weight_decay", "L2 regularization strength",
      [](RunConfig& c, const std::string& v) {
        c.train.weight_decay = parse_d("train.weight_decay", v);
      },
      [](const RunConfig& c) { return fmt_d(c.train.weight_decay); });
  add("train.scale_min", "lower bound of random scale augmentation",
      [](RunConfig& c, const std::string& v) {
        c.train.scale_min = parse_d("train.scale_min", v);
      },
      [](const RunConfig& c) { return fmt_d(c.train.scale_min); });
  add("train.scale_max", "upper bound of random scale augmentation",
      [](RunConfig& c, const std::string& v) {
        c.train.scale_max = parse_d("train.scale_max", v);
      },
      [](const RunConfig& c) { return fmt_d(c.train.scale_max); });
  add("train.flip_prob", "probability of a left-right flip",
      [](RunConfig& c, const std::string& v) {
        c.train.flip_prob = parse_d("train.flip_prob", v);
      },
      [](const RunConfig& c) { return fmt_d(c.train.flip_prob); });
  add("train.ignore_label", "label value excluded from loss and metrics",
      [](RunConfig& c, const std::string& v) {
        c.train.ignore_label = static_cast<int>(parse_i("train.ignore_label", v));
      },
      [](const RunConfig& c) { return std::to_string(c.train.ignore_label); });
  add("train.upsample_logits", "score at label resolution (false: downsample labels)",
      [](RunConfig& c, const std::string& v) {
        c.train.upsample_logits = parse_b("train.upsample_logits", v);
      },
      [](const RunConfig& c) { return c.train.upsample_logits ? "true" : "false"; });
  add("train.val_interval", "iterations between validation rows (0: stage ends only)",
      [](RunConfig& c, const std::string& v) {
        c.train.val_interval = static_cast<int>(parse_i("train.val_interval", v));
      },
      [](const RunConfig& c) { return std::to_string(c.train.val_interval); });
  add("train.bootstrap_factor", "duplication factor for hard-class images",
      [](RunConfig& c, const std::string& v) {
        c.train.bootstrap_factor = static_cast<int>(parse_i("train.bootstrap_factor", v));
      },
      [](const RunConfig& c) { return std::to_string(c.train.bootstrap_factor); });
  add("train.hard_classes", "classes whose images get duplicated (may be empty)",
      [](RunConfig& c, const std::string& v) {
        c.train.hard_classes = parse_list<int>("train.hard_classes", v,
                                               [](const std::string& k, const std::string& t) {
                                                 return static_cast<int>(parse_i(k, t));
                                               });
      },
      [](const RunConfig& c) { return join_i(c.train.hard_classes); });

  add("eval.os", "evaluation output_stride (8 or 16)",
      [](RunConfig& c, const std::string& v) {
        c.eval.eval_os = static_cast<int>(parse_i("eval.os", v));
      },
      [](const RunConfig& c) { return std::to_string(c.eval.eval_os); });
  add("eval.scales", "multi-scale inference factors",
      [](RunConfig& c, const std::string& v) {
        c.eval.scales = parse_list<double>("eval.scales", v, parse_d);
      },
      [](const RunConfig& c) { return join_d(c.eval.scales); });
  add("eval.flip", "average in left-right flipped inputs",
      [](RunConfig& c, const std::string& v) { c.eval.flip = parse_b("eval.flip", v); },
      [](const RunConfig& c) { return c.eval.flip ? "true" : "false"; });

  return keys;
}

constexpr int kMaxStages = 4;

StageConfig default_stage(int index) {
  if (index == 0) return StageConfig{16, BnMode::Train, 0.007, 1500};
  return StageConfig{8, BnMode::Frozen, 0.001, 1500};
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw std::invalid_argument("config: duplicate key '" + key + "'");
    }
  }

  RunConfig cfg;

  // Stage count first; it decides which stage keys are legal.
  int num_stages = 2;
  if (auto it = kv.find("train.stages"); it != kv.end()) {
    num_stages = static_cast<int>(parse_i("train.stages", it->second));
    if (num_stages < 1 || num_stages > kMaxStages) {
      throw std::invalid_argument("config: train.stages must be in [1, " +
                                  std::to_string(kMaxStages) + "]");
    }
    kv.erase(it);
  }
  cfg.train.stages.clear();
  for (int i = 0; i < num_stages; ++i) cfg.train.stages.push_back(default_stage(i));

  const auto keys = key_table();
  for (const auto& [key, value] : kv) {
    bool handled = false;
    for (const KeyDef& def : keys) {
      if (def.name == key) {
        def.set(cfg, value);
        handled = true;
        break;
      }
    }
    if (handled) continue;

    // train.stageN.{os,lr,iters,bn}
    for (int i = 0; i < num_stages && !handled; ++i) {
      const std::string prefix = "train.stage" + std::to_string(i + 1) + ".";
      if (key == prefix + "os") {
        cfg.train.stages[i].train_os = static_cast<int>(parse_i(key, value));
        handled = true;
      } else if (key == prefix + "lr") {
        cfg.train.stages[i].lr = parse_d(key, value);
        handled = true;
      } else if (key == prefix + "iters") {
        cfg.train.stages[i].iters = static_cast<int>(parse_i(key, value));
        handled = true;
      } else if (key == prefix + "bn") {
        cfg.train.stages[i].bn_mode = bn_from_string(key, value);
        handled = true;
      }
    }
    if (!handled) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& config) {
  std::string out;
  for (const KeyDef& def : key_table()) {
    out += def.name + " = " + def.get(config) + "\n";
  }
  out += "train.stages = " + std::to_string(config.train.stages.size()) + "\n";
  for (std::size_t i = 0; i < config.train.stages.size(); ++i) {
    const StageConfig& s = config.train.stages[i];
    const std::string prefix = "train.stage" + std::to_string(i + 1) + ".";
    out += prefix + "os = " + std::to_string(s.train_os) + "\n";
    out += prefix + "lr = " + fmt_d(s.lr) + "\n";
    out += prefix + "iters = " + std::to_string(s.iters) + "\n";
    out += prefix + "bn = " + bn_to_string(s.bn_mode) + "\n";
  }
  return out;
}

std::string run_config_reference() {
  RunConfig defaults;
  std::string out;
  for (const KeyDef& def : key_table()) {
    out += "  " + def.name + " = " + def.get(defaults) + "\n      " + def.doc + "\n";
  }
  out += "  train.stages = 2\n      number of schedule stages (1-" +
         std::to_string(kMaxStages) + ")\n";
  out += "  train.stageN.os / .lr / .iters / .bn\n      per-stage output_stride, base "
         "learning rate, iterations, BN mode (train/frozen);\n      defaults: stage1 = 16 / "
         "0.007 / 1500 / train, stage2 = 8 / 0.001 / 1500 / frozen\n";
  return out;
}

}  // namespace dlv3
