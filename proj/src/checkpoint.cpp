#include "knotseg/checkpoint.hpp"

#include <sstream>

#include "knotseg/binio.hpp"
#include "knotseg/config.hpp"

namespace knotseg {

namespace {

constexpr char kMagic[4] = {'K', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_record(ByteWriter& bw, const std::string& name, const Shape& shape,
                const float* data, std::int64_t n) {
  bw.put_string(name);
  bw.put_u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) bw.put_u32(static_cast<std::uint32_t>(d));
  bw.put_bytes(data, static_cast<std::size_t>(n) * sizeof(float));
}

struct Record {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

Record get_record(ByteReader& br) {
  Record r;
  r.name = br.get_string();
  const std::uint32_t rank = br.get_u32();
  require(rank <= 8, "checkpoint: absurd tensor rank ", rank);
  std::int64_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = br.get_u32();
    r.shape.push_back(d);
    n *= d;
  }
  r.data.resize(static_cast<std::size_t>(n));
  br.get_bytes(r.data.data(), static_cast<std::size_t>(n) * sizeof(float));
  return r;
}

std::string hex_u64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex_u64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

}  // namespace

void save_checkpoint(Model<float>& model, const AdamState<float>* opt,
                     const CheckpointExtras& extras,
                     const std::filesystem::path& path) {
  ByteWriter bw;
  bw.put_bytes(kMagic, 4);
  bw.put_u32(kVersion);

  std::ostringstream blob;
  blob << model_config_text(model.config());
  blob << "step=" << extras.step << "\n";
  blob << "epoch=" << extras.epoch << "\n";
  blob << "master_seed=" << extras.master_seed << "\n";
  blob << "rng_state=" << hex_u64(extras.rng_state[0]) << ","
       << hex_u64(extras.rng_state[1]) << "," << hex_u64(extras.rng_state[2])
       << "," << hex_u64(extras.rng_state[3]) << "\n";
  blob << "best_val_dice=" << extras.best_val_dice << "\n";
  if (opt) {
    blob << "adam_t=" << opt->t << "\n";
    blob << "adam_lr=" << opt->lr << "\n";
  }
  // batches_tracked counts ride in the blob; the buffer tables stay pure f32
  blob << "bn_tracked=";
  {
    auto bns = model.bn_states();
    for (std::size_t i = 0; i < bns.size(); ++i) {
      blob << (i ? "," : "") << bns[i].second->batches_tracked;
    }
  }
  blob << "\n";
  bw.put_string(blob.str());

  auto params = model.parameters();
  bw.put_u32(static_cast<std::uint32_t>(params.size()));
  for (auto& p : params) {
    put_record(bw, p.name(), p.shape(), p.data(), p.numel());
  }

  auto bns = model.bn_states();
  bw.put_u32(static_cast<std::uint32_t>(2 * bns.size()));
  for (auto& [name, st] : bns) {
    const Shape shape{static_cast<std::int64_t>(st->running_mean.size())};
    put_record(bw, name + ".bn.running_mean", shape, st->running_mean.data(),
               shape[0]);
    put_record(bw, name + ".bn.running_var", shape, st->running_var.data(),
               shape[0]);
  }

  if (opt) {
    require(opt->m.size() == params.size(),
            "checkpoint: optimizer tracks ", opt->m.size(),
            " parameters, model has ", params.size());
    bw.put_u32(static_cast<std::uint32_t>(2 * params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Shape& shape = params[i].shape();
      put_record(bw, "adam.m." + params[i].name(), shape, opt->m[i].data(),
                 params[i].numel());
      put_record(bw, "adam.v." + params[i].name(), shape, opt->v[i].data(),
                 params[i].numel());
    }
  } else {
    bw.put_u32(0);
  }

  bw.put_trailing_crc();
  write_file_atomic(path, bw.bytes());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const ModelConfig* expected) {
  const auto bytes = read_file_checked(path, kMagic);
  ByteReader br(bytes.data(), bytes.size(), path.string());
  char magic[4];
  br.get_bytes(magic, 4);
  const std::uint32_t version = br.get_u32();
  if (version != kVersion) {
    fail_runtime(path.string(), ": KCKP version mismatch (found ", version,
                 ", expected ", kVersion, ")");
  }

  const std::string blob = br.get_string();
  KvFile kvf = KvFile::parse_text(blob, path.string() + "#config");
  KvReader kv(kvf);
  const ModelConfig cfg = model_config_from_kv(kv);
  if (expected && !(cfg == *expected)) {
    fail_runtime(path.string(), ": checkpoint model config [",
                 cfg.summary(), "] does not match the requested config [",
                 expected->summary(), "]");
  }

  LoadedCheckpoint out;
  out.extras.step = kv.get_u64("step", 0);
  out.extras.epoch = kv.get_u64("epoch", 0);
  out.extras.master_seed = kv.get_u64("master_seed", 0);
  out.extras.best_val_dice = kv.get_double("best_val_dice", -1.0);
  {
    const std::string rs = kv.get_string("rng_state", "");
    if (!rs.empty()) {
      std::istringstream is(rs);
      std::string part;
      int i = 0;
      while (std::getline(is, part, ',') && i < 4) {
        out.extras.rng_state[i++] = parse_hex_u64(part);
      }
    }
  }
  const std::uint64_t adam_t = kv.get_u64("adam_t", 0);
  const double adam_lr = kv.get_double("adam_lr", 0.0001);
  std::vector<std::uint64_t> bn_tracked;
  {
    const std::string bt = kv.get_string("bn_tracked", "");
    std::istringstream is(bt);
    std::string part;
    while (std::getline(is, part, ',')) {
      if (!part.empty()) bn_tracked.push_back(std::stoull(part));
    }
  }

  out.model = std::make_unique<Model<float>>(cfg, /*seed=*/0);
  auto params = out.model->parameters();

  const std::uint32_t n_params = br.get_u32();
  require(n_params == params.size(), path.string(), ": checkpoint has ",
          n_params, " parameters, model wants ", params.size());
  for (auto& p : params) {
    Record r = get_record(br);
    if (r.name != p.name() || r.shape != p.shape()) {
      fail_runtime(path.string(), ": parameter mismatch: file has '", r.name,
                   "' ", shape_str(r.shape), ", model expects '", p.name(),
                   "' ", shape_str(p.shape()));
    }
    std::copy(r.data.begin(), r.data.end(), p.data());
  }

  auto bns = out.model->bn_states();
  const std::uint32_t n_buffers = br.get_u32();
  require(n_buffers == 2 * bns.size(), path.string(),
          ": checkpoint has ", n_buffers, " batchnorm buffers, model wants ",
          2 * bns.size());
  for (std::size_t i = 0; i < bns.size(); ++i) {
    Record mean = get_record(br);
    Record var = get_record(br);
    auto* st = bns[i].second;
    require(mean.data.size() == st->running_mean.size() &&
                var.data.size() == st->running_var.size(),
            path.string(), ": batchnorm buffer size mismatch at ",
            bns[i].first);
    st->running_mean = std::move(mean.data);
    st->running_var = std::move(var.data);
    st->batches_tracked = i < bn_tracked.size() ? bn_tracked[i] : 0;
  }

  out.opt.lr = static_cast<float>(adam_lr);
  out.opt.t = adam_t;
  out.opt.attach(params);
  const std::uint32_t n_opt = br.get_u32();
  if (n_opt > 0) {
    require(n_opt == 2 * params.size(), path.string(),
            ": checkpoint has ", n_opt, " optimizer tensors, expected ",
            2 * params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      Record m = get_record(br);
      Record v = get_record(br);
      require(m.data.size() == out.opt.m[i].size() &&
                  v.data.size() == out.opt.v[i].size(),
              path.string(), ": optimizer moment size mismatch at ",
              params[i].name());
      out.opt.m[i] = std::move(m.data);
      out.opt.v[i] = std::move(v.data);
    }
  }
  require(br.remaining() == 0, path.string(), ": trailing bytes after tables");
  return out;
}

}  // namespace knotseg
