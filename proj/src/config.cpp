#include "mlde/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>

#include <fmt/format.h>

#include "mlde/errors.hpp"

namespace mlde {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Setters return an error message, or nothing on success.
using Setter = std::function<std::optional<std::string>(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

template <class T>
std::optional<T> parse_number(const std::string& s) {
  T value{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(value)) return std::nullopt;
  return value;
}

std::optional<bool> parse_bool(const std::string& s) {
  std::string v = s;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  return std::nullopt;
}

template <class T>
std::optional<std::vector<T>> parse_number_list(const std::string& s) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    auto v = parse_number<T>(item);
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  return out;
}

template <class T, std::size_t N>
std::string join(const std::array<T, N>& a) {
  return fmt::format("{}", fmt::join(a, ","));
}

struct Entry {
  ConfigKey key;
  Setter set;
  Getter get;
};

Setter path_setter(std::filesystem::path RunConfig::*member) {
  return [member](RunConfig& c, const std::string& v) -> std::optional<std::string> {
    c.*member = v;
    return std::nullopt;
  };
}
Getter path_getter(std::filesystem::path RunConfig::*member) {
  return [member](const RunConfig& c) { return (c.*member).string(); };
}

template <class T>
Setter number_setter(std::function<T&(RunConfig&)> field) {
  return [field](RunConfig& c, const std::string& v) -> std::optional<std::string> {
    auto n = parse_number<T>(v);
    if (!n) return "'" + v + "' is not a valid number";
    field(c) = *n;
    return std::nullopt;
  };
}

Setter bool_setter(std::function<bool&(RunConfig&)> field) {
  return [field](RunConfig& c, const std::string& v) -> std::optional<std::string> {
    auto b = parse_bool(v);
    if (!b) return "'" + v + "' is not a boolean (true/false)";
    field(c) = *b;
    return std::nullopt;
  };
}

template <std::size_t N>
Setter float_array_setter(std::function<std::array<float, N>&(RunConfig&)> field) {
  return [field](RunConfig& c, const std::string& v) -> std::optional<std::string> {
    auto list = parse_number_list<float>(v);
    if (!list || list->size() != N)
      return fmt::format("expected {} comma-separated numbers, got '{}'", N, v);
    std::copy(list->begin(), list->end(), field(c).begin());
    return std::nullopt;
  };
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    auto add = [&](std::string_view name, std::string_view type, std::string_view doc, Setter s, Getter g) {
      t.push_back({{name, type, doc}, std::move(s), std::move(g)});
    };
    add("train_manifest", "path", "CSV manifest (image_id,path,label) of the training split",
        path_setter(&RunConfig::train_manifest), path_getter(&RunConfig::train_manifest));
    add("validation_manifest", "path", "optional labeled manifest scored after every epoch",
        path_setter(&RunConfig::validation_manifest), path_getter(&RunConfig::validation_manifest));
    add("eval_manifest", "path", "manifest scored by predict/evaluate/report",
        path_setter(&RunConfig::eval_manifest), path_getter(&RunConfig::eval_manifest));
    add("out_dir", "path", "directory for every output file", path_setter(&RunConfig::out_dir),
        path_getter(&RunConfig::out_dir));
    add("checkpoint_dir", "path", "checkpoint directory (default <out_dir>/checkpoints)",
        path_setter(&RunConfig::checkpoint_dir), path_getter(&RunConfig::checkpoint_dir));
    add("roc_svg", "path", "write ROC curves of the ensemble to this SVG file",
        path_setter(&RunConfig::roc_svg), path_getter(&RunConfig::roc_svg));
    add("backbone", "enum{resnet50_pretrained,tiny_test}", "branch architecture",
        [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
          auto k = parse_backbone_kind(v);
          if (!k) return "unknown backbone '" + v + "'";
          c.backbone_kind = *k;
          return std::nullopt;
        },
        [](const RunConfig& c) { return std::string(to_string(c.backbone_kind)); });
    add("pretrained_weights", "path", "ResNet-50 weight archive (required for resnet50_pretrained)",
        path_setter(&RunConfig::pretrained_weights), path_getter(&RunConfig::pretrained_weights));
    add("pretrained_sha256", "hex", "expected SHA-256 of pretrained_weights; empty skips the check",
        [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
          if (!v.empty() && (v.size() != 64 ||
                             !std::all_of(v.begin(), v.end(), [](char ch) { return std::isxdigit(static_cast<unsigned char>(ch)); })))
            return "expected 64 hex digits";
          c.pretrained_sha256 = v;
          return std::nullopt;
        },
        [](const RunConfig& c) { return c.pretrained_sha256; });
    add("xavier", "enum{uniform,normal}", "distribution of the fresh 2-way head",
        [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
          auto x = parse_xavier_variant(v);
          if (!x) return "unknown xavier variant '" + v + "'";
          c.xavier = *x;
          return std::nullopt;
        },
        [](const RunConfig& c) { return std::string(to_string(c.xavier)); });
    add("learning_rate", "real>=0", "SGD step size",
        number_setter<double>([](RunConfig& c) -> double& { return c.train.learning_rate; }),
        [](const RunConfig& c) { return fmt_double(c.train.learning_rate); });
    add("momentum", "real in [0,1)", "SGD momentum",
        number_setter<double>([](RunConfig& c) -> double& { return c.train.momentum; }),
        [](const RunConfig& c) { return fmt_double(c.train.momentum); });
    add("fusion_lr_scale", "real>=0", "fusion-logit step size relative to learning_rate",
        number_setter<double>([](RunConfig& c) -> double& { return c.train.fusion_lr_scale; }),
        [](const RunConfig& c) { return fmt_double(c.train.fusion_lr_scale); });
    add("batch_size", "int>=1", "images per optimization step",
        number_setter<int>([](RunConfig& c) -> int& { return c.train.batch_size; }),
        [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
    add("epochs_per_stage", "int list", "epochs of each fine-tuning stage; the list length is the stage count",
        [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
          auto list = parse_number_list<int>(v);
          if (!list) return "expected comma-separated integers, got '" + v + "'";
          c.train.epochs_per_stage = *list;
          return std::nullopt;
        },
        [](const RunConfig& c) { return fmt::format("{}", fmt::join(c.train.epochs_per_stage, ",")); });
    add("seed", "uint64", "base seed; task k uses seed + k",
        number_setter<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.train.seed; }),
        [](const RunConfig& c) { return std::to_string(c.train.seed); });
    add("scales", "4 reals", "ROI scale per pyramid level, first must be 1, strictly decreasing",
        [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
          auto list = parse_number_list<double>(v);
          if (!list || list->size() != kPyramidLevels)
            return "expected 4 comma-separated scales, got '" + v + "'";
          std::copy(list->begin(), list->end(), c.train.scales.begin());
          return std::nullopt;
        },
        [](const RunConfig& c) { return join(c.train.scales); });
    add("norm_mean", "3 reals", "per-channel normalization mean",
        float_array_setter<3>([](RunConfig& c) -> std::array<float, 3>& { return c.train.normalization.mean; }),
        [](const RunConfig& c) { return join(c.train.normalization.mean); });
    add("norm_std", "3 reals", "per-channel normalization standard deviation",
        float_array_setter<3>([](RunConfig& c) -> std::array<float, 3>& { return c.train.normalization.std; }),
        [](const RunConfig& c) { return join(c.train.normalization.std); });
    add("deterministic", "bool", "single worker for bitwise-reproducible training",
        bool_setter([](RunConfig& c) -> bool& { return c.train.deterministic; }),
        [](const RunConfig& c) { return std::string(c.train.deterministic ? "true" : "false"); });
    add("branch_pretrain_epochs", "int>=0", "epochs of per-branch training before joint fine-tuning",
        number_setter<int>([](RunConfig& c) -> int& { return c.train.branch_pretrain_epochs; }),
        [](const RunConfig& c) { return std::to_string(c.train.branch_pretrain_epochs); });
    add("hflip", "bool", "random horizontal flips during training",
        bool_setter([](RunConfig& c) -> bool& { return c.train.hflip; }),
        [](const RunConfig& c) { return std::string(c.train.hflip ? "true" : "false"); });
    add("workers", "int>=0", "worker threads (0 = logical core count)",
        number_setter<int>([](RunConfig& c) -> int& { return c.workers; }),
        [](const RunConfig& c) { return std::to_string(c.workers); });
    add("cache_images", "bool", "keep decoded images in memory",
        bool_setter([](RunConfig& c) -> bool& { return c.cache_images; }),
        [](const RunConfig& c) { return std::string(c.cache_images ? "true" : "false"); });
    return t;
  }();
  return table;
}

const Entry* find_entry(std::string_view name) {
  for (const auto& e : entries())
    if (e.key.name == name) return &e;
  return nullptr;
}

}  // namespace

std::filesystem::path RunConfig::checkpoints() const {
  return checkpoint_dir.empty() ? out_dir / "checkpoints" : checkpoint_dir;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& e : entries()) j[std::string(e.key.name)] = e.get(*this);
  return j;
}

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

std::string render_config_schema() {
  const RunConfig defaults;
  std::string out =
      "# Run configuration: one `key = value` per line, `#` starts a comment.\n"
      "# Every key is also accepted as a command-line flag (--key value); flags win.\n\n";
  for (const auto& e : entries()) {
    out += fmt::format("# {} ({})\n", e.key.description, e.key.type);
    out += fmt::format("{} = {}\n\n", e.key.name, e.get(defaults));
  }
  return out;
}

std::vector<Assignment> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::vector<Assignment> out;
  std::vector<std::string> problems;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      problems.push_back(fmt::format("{}:{}: expected key = value", path.string(), n));
      continue;
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) {
      problems.push_back(fmt::format("{}:{}: missing key", path.string(), n));
      continue;
    }
    out.emplace_back(std::move(key), trim(std::string_view(body).substr(eq + 1)));
  }
  if (!problems.empty()) throw ConfigError(problems);
  return out;
}

RunConfig build_run_config(const std::vector<Assignment>& assignments) {
  RunConfig c;
  std::vector<std::string> problems;
  for (const auto& [key, value] : assignments) {
    const Entry* e = find_entry(key);
    if (e == nullptr) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    if (auto err = e->set(c, value)) problems.push_back(key + ": " + *err);
  }

  c.train.backbone = c.backbone_kind == BackboneKind::tiny_test
                         ? BackboneSpec::tiny_test()
                         : BackboneSpec::resnet50_pretrained(c.pretrained_weights, c.pretrained_sha256);
  c.train.backbone.xavier = c.xavier;

  for (auto& v : c.train.violations()) problems.push_back(std::move(v));
  if (c.workers < 0) problems.push_back("workers must be >= 0");
  if (c.out_dir.empty()) problems.push_back("out_dir must not be empty");
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

void require_keys(const RunConfig& config, std::initializer_list<std::string_view> keys) {
  std::vector<std::string> missing;
  for (auto k : keys) {
    const Entry* e = find_entry(k);
    if (e != nullptr && e->get(config).empty()) missing.push_back(std::string(k) + " is required");
  }
  if (!missing.empty()) throw ConfigError(missing);
}

}  // namespace mlde
