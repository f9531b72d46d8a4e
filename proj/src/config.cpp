#include "knotseg/config.hpp"

#include <fstream>
#include <sstream>

namespace knotseg {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, e - b + 1);
}

}  // namespace

KvFile KvFile::parse_text(const std::string& text, const std::string& source) {
  KvFile kv;
  kv.source = source;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(source, ":", lineno, ": expected key=value, got '", t, "'");
    }
    Line l;
    l.lineno = lineno;
    l.key = trim(t.substr(0, eq));
    l.value = trim(t.substr(eq + 1));
    require(!l.key.empty(), source, ":", lineno, ": empty key");
    kv.lines.push_back(std::move(l));
  }
  return kv;
}

KvFile KvFile::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail_runtime(path.string(), ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path.string());
}

KvReader::KvReader(const KvFile& kv) : kv_(kv) {
  for (const auto& l : kv.lines) consumed_[l.key] = false;
}

const KvFile::Line* KvReader::find(const std::string& key) const {
  const KvFile::Line* found = nullptr;
  for (const auto& l : kv_.lines) {
    if (l.key == key) found = &l;  // later lines override earlier ones
  }
  return found;
}

bool KvReader::has(const std::string& key) const {
  return find(key) != nullptr;
}

std::string KvReader::get_string(const std::string& key,
                                 const std::string& dflt) {
  const auto* l = find(key);
  if (!l) return dflt;
  consumed_[key] = true;
  return l->value;
}

std::int64_t KvReader::get_int(const std::string& key, std::int64_t dflt) {
  const auto* l = find(key);
  if (!l) return dflt;
  consumed_[key] = true;
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(l->value, &pos);
    require(pos == l->value.size(), "trailing characters");
    return v;
  } catch (...) {
    fail(kv_.source, ":", l->lineno, ": key '", key,
         "' expects an integer, got '", l->value, "'");
  }
}

std::uint64_t KvReader::get_u64(const std::string& key, std::uint64_t dflt) {
  const auto* l = find(key);
  if (!l) return dflt;
  consumed_[key] = true;
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(l->value, &pos);
    require(pos == l->value.size(), "trailing characters");
    return v;
  } catch (...) {
    fail(kv_.source, ":", l->lineno, ": key '", key,
         "' expects an unsigned integer, got '", l->value, "'");
  }
}

double KvReader::get_double(const std::string& key, double dflt) {
  const auto* l = find(key);
  if (!l) return dflt;
  consumed_[key] = true;
  try {
    std::size_t pos = 0;
    const double v = std::stod(l->value, &pos);
    require(pos == l->value.size(), "trailing characters");
    return v;
  } catch (...) {
    fail(kv_.source, ":", l->lineno, ": key '", key,
         "' expects a number, got '", l->value, "'");
  }
}

bool KvReader::get_bool(const std::string& key, bool dflt) {
  const auto* l = find(key);
  if (!l) return dflt;
  consumed_[key] = true;
  if (l->value == "on" || l->value == "true" || l->value == "1") return true;
  if (l->value == "off" || l->value == "false" || l->value == "0")
    return false;
  fail(kv_.source, ":", l->lineno, ": key '", key,
       "' expects on/off, got '", l->value, "'");
}

void KvReader::finish() const {
  for (const auto& l : kv_.lines) {
    const auto it = consumed_.find(l.key);
    if (it == consumed_.end() || !it->second) {
      fail(kv_.source, ":", l.lineno, ": unknown key '", l.key, "'");
    }
  }
}

namespace {

std::array<int, 3> parse_channels(const std::string& s,
                                  const std::string& source) {
  std::array<int, 3> ch{};
  std::istringstream is(s);
  std::string part;
  int i = 0;
  while (std::getline(is, part, ',')) {
    require(i < 3, source, ": encoder_channels expects exactly 3 entries");
    ch[i++] = std::stoi(part);
  }
  require(i == 3, source, ": encoder_channels expects exactly 3 entries, got ",
          i);
  return ch;
}

std::string channels_text(const std::array<int, 3>& ch) {
  return format_msg(ch[0], ",", ch[1], ",", ch[2]);
}

}  // namespace

std::string model_config_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "variant=" << variant_id(cfg.variant) << "\n"
     << "input_resolution=" << cfg.input_resolution << "\n"
     << "sequence_length=" << cfg.sequence_length << "\n"
     << "encoder_channels=" << channels_text(cfg.encoder_channels) << "\n"
     << "dropout_p=" << cfg.dropout_p << "\n"
     << "scale_preset=" << cfg.scale_preset << "\n";
  return os.str();
}

ModelConfig model_config_from_kv(KvReader& kv) {
  ModelConfig cfg;
  cfg.variant = variant_from_id(kv.get_string("variant", "convlstm"));
  cfg.input_resolution =
      static_cast<int>(kv.get_int("input_resolution", cfg.input_resolution));
  cfg.sequence_length =
      static_cast<int>(kv.get_int("sequence_length", cfg.sequence_length));
  if (kv.has("encoder_channels")) {
    cfg.encoder_channels =
        parse_channels(kv.get_string("encoder_channels", ""), "config");
  }
  cfg.dropout_p = static_cast<float>(kv.get_double("dropout_p", cfg.dropout_p));
  cfg.scale_preset = kv.get_string("scale_preset", cfg.scale_preset);
  return cfg;
}

RunConfig resolve_config(const KvFile& kv) {
  KvReader r(kv);
  RunConfig cfg;

  // preset first: it rewrites the model and generator baselines, everything
  // else overrides on top
  const std::string preset = r.get_string("preset", "full");
  cfg.gen = GeneratorConfig::by_name(preset);
  if (preset == "desk") {
    cfg.train.model = ModelConfig::desk(Variant::kConvLstm);
  }

  cfg.train.model.variant =
      variant_from_id(r.get_string("model", variant_id(cfg.train.model.variant)));
  cfg.train.model.input_resolution = static_cast<int>(
      r.get_int("resolution", cfg.train.model.input_resolution));
  cfg.train.model.sequence_length = static_cast<int>(
      r.get_int("sequence_length", cfg.train.model.sequence_length));
  if (r.has("encoder_channels")) {
    cfg.train.model.encoder_channels =
        parse_channels(r.get_string("encoder_channels", ""), kv.source);
  }
  cfg.train.model.dropout_p = static_cast<float>(
      r.get_double("dropout_p", cfg.train.model.dropout_p));
  cfg.train.model.scale_preset = preset;

  cfg.train.epochs = static_cast<int>(r.get_int("epochs", cfg.train.epochs));
  if (r.has("batch_size")) {
    const std::string b = r.get_string("batch_size", "auto");
    cfg.train.batch_size = b == "auto" ? 0 : std::stoi(b);
  }
  cfg.train.lr = r.get_double("lr", cfg.train.lr);
  cfg.train.seed = r.get_u64("seed", cfg.train.seed);
  cfg.train.augment.enabled = r.get_bool("augment", cfg.train.augment.enabled);
  cfg.train.augment.hflip_prob =
      r.get_double("hflip_prob", cfg.train.augment.hflip_prob);
  const int n_angles = static_cast<int>(
      r.get_int("rotation_angles", AugmentSpec::kNumAngles));
  require(n_angles == AugmentSpec::kNumAngles,
          kv.source, ": rotation_angles is fixed at ", AugmentSpec::kNumAngles,
          " (multiples of 45 degrees)");
  cfg.train.manifest_path = r.get_string("data", cfg.train.manifest_path);
  cfg.train.checkpoint_dir =
      r.get_string("ckpt_dir", cfg.train.checkpoint_dir);

  cfg.eval.threshold = r.get_double("threshold", cfg.eval.threshold);
  cfg.eval.pixel_pitch_mm =
      r.get_double("pixel_pitch_mm", cfg.gen.pixel_pitch_mm);
  cfg.eval.slice_pitch_mm =
      r.get_double("slice_pitch_mm", cfg.gen.slice_pitch_mm);
  const std::string policy =
      r.get_string("hd_empty_policy", "skip");
  if (policy == "skip") {
    cfg.eval.hd_empty_policy = HdEmptyPolicy::kSkip;
  } else if (policy == "frame_diagonal") {
    cfg.eval.hd_empty_policy = HdEmptyPolicy::kFrameDiagonal;
  } else {
    fail(kv.source, ": hd_empty_policy must be skip or frame_diagonal, got '",
         policy, "'");
  }
  const std::string hd_mode = r.get_string("hd_mode", "volume3d");
  if (hd_mode == "volume3d") {
    cfg.eval.hd_mode = HdMode::kVolume3d;
  } else if (hd_mode == "slice2d_mean") {
    cfg.eval.hd_mode = HdMode::kSlice2dMean;
  } else {
    fail(kv.source, ": hd_mode must be volume3d or slice2d_mean, got '",
         hd_mode, "'");
  }

  cfg.predict.window = static_cast<int>(r.get_int("window", 0));
  cfg.predict.stride = static_cast<int>(r.get_int("stride", 1));
  require(cfg.predict.stride >= 1, kv.source, ": stride must be >= 1");

  // generator structure (species geometry stays preset-defined)
  cfg.gen.master_seed = r.get_u64("gen_seed", cfg.train.seed);
  cfg.gen.raster_size =
      static_cast<int>(r.get_int("gen_raster_size", cfg.gen.raster_size));
  cfg.gen.slices_per_tree = static_cast<int>(
      r.get_int("gen_slices_per_tree", cfg.gen.slices_per_tree));
  cfg.gen.volume_slices = static_cast<int>(
      r.get_int("gen_volume_slices", cfg.gen.volume_slices));
  cfg.gen.ring_thickness_px = static_cast<int>(
      r.get_int("gen_ring_thickness_px", cfg.gen.ring_thickness_px));
  cfg.gen.train_fir =
      static_cast<int>(r.get_int("gen_train_fir", cfg.gen.train_fir));
  cfg.gen.train_spruce =
      static_cast<int>(r.get_int("gen_train_spruce", cfg.gen.train_spruce));
  cfg.gen.val_fir = static_cast<int>(r.get_int("gen_val_fir", cfg.gen.val_fir));
  cfg.gen.val_spruce =
      static_cast<int>(r.get_int("gen_val_spruce", cfg.gen.val_spruce));
  cfg.gen.test_fir =
      static_cast<int>(r.get_int("gen_test_fir", cfg.gen.test_fir));
  cfg.gen.test_spruce =
      static_cast<int>(r.get_int("gen_test_spruce", cfg.gen.test_spruce));

  r.finish();
  return cfg;
}

std::string config_echo(const RunConfig& cfg) {
  std::ostringstream os;
  os << "preset=" << cfg.train.model.scale_preset << "\n"
     << "model=" << variant_id(cfg.train.model.variant) << "\n"
     << "resolution=" << cfg.train.model.input_resolution << "\n"
     << "sequence_length=" << cfg.train.model.sequence_length << "\n"
     << "encoder_channels=" << channels_text(cfg.train.model.encoder_channels)
     << "\n"
     << "dropout_p=" << cfg.train.model.dropout_p << "\n"
     << "epochs=" << cfg.train.epochs << "\n"
     << "batch_size=" << cfg.train.resolved_batch_size() << "\n"
     << "lr=" << cfg.train.lr << "\n"
     << "seed=" << cfg.train.seed << "\n"
     << "augment=" << (cfg.train.augment.enabled ? "on" : "off") << "\n"
     << "hflip_prob=" << cfg.train.augment.hflip_prob << "\n"
     << "rotation_angles=" << AugmentSpec::kNumAngles << "\n"
     << "threshold=" << cfg.eval.threshold << "\n"
     << "pixel_pitch_mm=" << cfg.eval.pixel_pitch_mm << "\n"
     << "slice_pitch_mm=" << cfg.eval.slice_pitch_mm << "\n"
     << "window="
     << (cfg.predict.window > 0 ? cfg.predict.window
                                : cfg.train.model.sequence_length)
     << "\n"
     << "stride=" << cfg.predict.stride << "\n";
  return os.str();
}

}  // namespace knotseg
