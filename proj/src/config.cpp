#include "partseg/config.hpp"

#include <fstream>
#include <sstream>

namespace partseg {

namespace {
std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}
}  // namespace

const std::map<std::string, RunConfig::KeyInfo>& RunConfig::registry() {
  static const std::map<std::string, KeyInfo> reg = {
      {"model.embed_dim", {"8", "token embedding width"}},
      {"model.image_size", {"64", "square image side in pixels"}},
      {"model.token_grid", {"16", "token grid side (image_size must divide evenly)"}},
      {"train.base_lr", {"0.0001", "peak learning rate after warmup"}},
      {"train.total_iters", {"20000", "total optimizer steps"}},
      {"train.batch_size", {"8", "samples per step"}},
      {"train.warmup_iters", {"200", "linear warmup steps"}},
      {"train.poly_power", {"0.9", "polynomial decay exponent"}},
      {"train.grad_clip_norm", {"0.01", "global gradient-norm ceiling"}},
      {"train.checkpoint_every", {"1000", "steps between checkpoints/evals"}},
      {"train.weight_decay", {"0.0001", "decoupled weight decay"}},
      {"train.seed", {"1", "training RNG seed (init, shuffling)"}},
      {"train.select_protocol", {"oracle_obj", "protocol used to pick the best checkpoint"}},
      {"loss.lambda_obj", {"1", "object-group mask loss weight"}},
      {"loss.lambda_part", {"1", "part-group mask loss weight"}},
      {"loss.lambda_sep", {"0.1", "attention separation loss weight"}},
      {"loss.lambda_enh", {"0.1", "attention enhancement loss weight"}},
      {"attn.gamma", {"0.3", "binarization threshold in (0,1)"}},
      {"attn.sigma", {"1", "gaussian blur sigma (tokens)"}},
      {"attn.kernel", {"3", "gaussian kernel side, odd"}},
      {"attn.tau", {"0.05", "soft binarization temperature"}},
      {"attn.epsilon", {"1e-08", "union denominator guard"}},
      {"attn.enhance_on_normalized", {"true", "enhancement on smoothed normalized maps"}},
      {"attn.count_all_categories", {"true", "|C| counts all taxonomy pairs"}},
      {"synth.image_size", {"64", "generated image side"}},
      {"synth.train_samples", {"500", "train split size"}},
      {"synth.val_samples", {"100", "val split size"}},
      {"synth.small_part_ratio", {"0.05", "dot area fraction of object, (0,0.2]"}},
      {"synth.seed", {"7", "generator seed"}},
      {"synth.objects", {"blobA,blobB,blobC", "object names, comma-separated"}},
      {"synth.unseen", {"blobC", "objects held out of the train split"}},
      {"synth.parts", {"cap,body,dot", "part names (exactly three)"}},
      {"data.root", {"", "dataset root with taxonomy.json and train/ val/"}},
      {"eval.include_background", {"false", "include class 0 in metric means"}},
  };
  return reg;
}

RunConfig::RunConfig() {
  for (const auto& [k, info] : registry()) values_[k] = info.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (registry().find(key) == registry().end())
    throw ConfigError(key, "unknown config key: " + key);
  values_[key] = value;
}

void RunConfig::set_kv(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError(assignment, "expected KEY=VALUE, got \"" + assignment + "\"");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file: " + path);
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config", path + ":" + std::to_string(row) + ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown config key: " + key);
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, key + ": expected a number, got \"" + v + "\"");
  }
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return static_cast<int>(n);
  } catch (const std::exception&) {
    throw ConfigError(key, key + ": expected an integer, got \"" + v + "\"");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, key + ": expected true/false, got \"" + v + "\"");
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    if (v.find('-') != std::string::npos) throw std::invalid_argument("negative");
    std::size_t used = 0;
    unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::uint64_t>(n);
  } catch (const std::exception&) {
    throw ConfigError(key, key + ": expected an unsigned integer, got \"" + v + "\"");
  }
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(v);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

std::string RunConfig::hash() const {
  return to_hex(fnv1a64(echo()));
}

}  // namespace partseg
