#include "geotdm/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "geotdm/config.hpp"
#include "geotdm/gtrj.hpp"

namespace geotdm {

namespace {

constexpr uint16_t kVersion = 1;

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}
void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}
void put_f64(std::vector<uint8_t>& b, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}
void put_str(std::vector<uint8_t>& b, const std::string& s) {
  put_u32(b, static_cast<uint32_t>(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}
void put_tensor(std::vector<uint8_t>& b, const std::string& name, const TensorF& t) {
  put_u16(b, static_cast<uint16_t>(name.size()));
  b.insert(b.end(), name.begin(), name.end());
  b.push_back(static_cast<uint8_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put_u32(b, static_cast<uint32_t>(t.dim(i)));
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t bits;
    float v = t[i];
    std::memcpy(&bits, &v, 4);
    put_u32(b, bits);
  }
}

struct Reader {
  std::vector<uint8_t> buf;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  TensorF tensor() {
    uint16_t nlen = u16();
    std::string name = str(nlen);
    need(1);
    int nd = buf[pos++];
    Shape shape(nd);
    for (int i = 0; i < nd; ++i) shape[i] = u32();
    TensorF t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) {
      uint32_t bits = u32();
      float v;
      std::memcpy(&v, &bits, 4);
      t[i] = v;
    }
    last_name = name;
    return t;
  }
  std::string last_name;
};

std::string config_echo(const CheckpointMeta& m) {
  Config c;
  c.set("model", "n_layers", std::to_string(m.cfg.n_layers));
  c.set("model", "hidden_dim", std::to_string(m.cfg.hidden_dim));
  c.set("model", "time_emb_dim", std::to_string(m.cfg.time_emb_dim));
  c.set("model", "n_heads", std::to_string(m.cfg.n_heads));
  c.set("model", "feat_dim", std::to_string(m.cfg.feat_dim));
  c.set("model", "space_dim", std::to_string(m.cfg.space_dim));
  c.set("model", "conditional", m.cfg.conditional ? "true" : "false");
  c.set("model", "t_target", std::to_string(m.cfg.t_target));
  std::ostringstream bs, be;
  bs.precision(17);
  be.precision(17);
  bs << m.beta_start;
  be << m.beta_end;
  c.set("schedule", "n_steps", std::to_string(m.sched_steps));
  c.set("schedule", "beta_start", bs.str());
  c.set("schedule", "beta_end", be.str());
  return c.serialize();
}

CheckpointMeta parse_echo(const std::string& text) {
  Config c = Config::parse_string(text, "<checkpoint>");
  CheckpointMeta m;
  m.cfg.n_layers = static_cast<int>(c.get_int("model", "n_layers"));
  m.cfg.hidden_dim = static_cast<int>(c.get_int("model", "hidden_dim"));
  m.cfg.time_emb_dim = static_cast<int>(c.get_int("model", "time_emb_dim"));
  m.cfg.n_heads = static_cast<int>(c.get_int("model", "n_heads"));
  m.cfg.feat_dim = static_cast<int>(c.get_int("model", "feat_dim"));
  m.cfg.space_dim = static_cast<int>(c.get_int("model", "space_dim"));
  m.cfg.conditional = c.get_bool("model", "conditional");
  m.cfg.t_target = static_cast<int>(c.get_int("model", "t_target"));
  m.sched_steps = static_cast<int>(c.get_int("schedule", "n_steps"));
  m.beta_start = c.get_float("schedule", "beta_start");
  m.beta_end = c.get_float("schedule", "beta_end");
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, EgtnModel<float>& model, const CheckpointMeta& meta,
                     Adam<float>* opt) {
  std::vector<uint8_t> out;
  out.push_back('G');
  out.push_back('T');
  out.push_back('C');
  out.push_back('K');
  put_u16(out, kVersion);
  put_str(out, config_echo(meta));
  put_u64(out, static_cast<uint64_t>(meta.step));
  out.push_back(opt ? 1 : 0);
  put_u64(out, opt ? static_cast<uint64_t>(opt->t()) : 0);
  std::vector<std::pair<std::string, TensorF>> tensors;
  model.visit_params([&](const std::string& name, Var<float>& v) {
    tensors.emplace_back(name, v->value);
  });
  uint32_t count = static_cast<uint32_t>(tensors.size());
  put_u32(out, opt ? count * 3 : count);
  for (auto& [name, t] : tensors) put_tensor(out, name, t);
  if (opt) {
    for (size_t i = 0; i < tensors.size(); ++i)
      put_tensor(out, "adam.m." + tensors[i].first, opt->moments1()[i]);
    for (size_t i = 0; i < tensors.size(); ++i)
      put_tensor(out, "adam.v." + tensors[i].first, opt->moments2()[i]);
  }
  put_u32(out, crc32(out.data(), out.size()));
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + tmp + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

namespace {

Reader open_checked(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  Reader r;
  r.buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (r.buf.size() < 10 || std::memcmp(r.buf.data(), "GTCK", 4) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<uint32_t>(r.buf[r.buf.size() - 4 + i]) << (8 * i);
  if (crc32(r.buf.data(), r.buf.size() - 4) != stored)
    throw std::runtime_error("checkpoint: checksum mismatch in '" + path + "'");
  r.pos = 4;
  uint16_t version = r.u16();
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  return r;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::string& path) {
  Reader r = open_checked(path);
  uint32_t echo_len = r.u32();
  CheckpointMeta meta = parse_echo(r.str(echo_len));
  meta.step = static_cast<int64_t>(r.u64());
  meta.has_optimizer = r.buf[r.pos++] != 0;
  int64_t adam_t = static_cast<int64_t>(r.u64());
  uint32_t count = r.u32();
  Rng init(0);
  LoadedCheckpoint out{EgtnModel<float>::create(meta.cfg, init), meta, {}, {}, adam_t};
  std::vector<std::pair<std::string, TensorF>> loaded;
  for (uint32_t i = 0; i < count; ++i) {
    TensorF t = r.tensor();
    loaded.emplace_back(r.last_name, std::move(t));
  }
  size_t k = 0;
  std::vector<std::string> bad;
  out.model.visit_params([&](const std::string& name, Var<float>& v) {
    if (k >= loaded.size() || loaded[k].first != name)
      bad.push_back(name + " (missing or out of order)");
    else if (loaded[k].second.shape() != v->value.shape())
      bad.push_back(name + ": checkpoint " + shape_str(loaded[k].second.shape()) + " vs model " +
                    shape_str(v->value.shape()));
    else
      v->value = loaded[k].second;
    ++k;
  });
  if (!bad.empty()) {
    std::string msg = "checkpoint: tensor mismatches in '" + path + "':";
    for (auto& b : bad) msg += "\n  " + b;
    throw std::runtime_error(msg);
  }
  if (meta.has_optimizer) {
    size_t n_model = k;
    for (size_t i = n_model; i < loaded.size(); ++i) {
      if (loaded[i].first.rfind("adam.m.", 0) == 0)
        out.adam_m.push_back(loaded[i].second);
      else if (loaded[i].first.rfind("adam.v.", 0) == 0)
        out.adam_v.push_back(loaded[i].second);
    }
  }
  return out;
}

void load_checkpoint_into(const std::string& path, EgtnModel<float>& model) {
  Reader r = open_checked(path);
  uint32_t echo_len = r.u32();
  (void)parse_echo(r.str(echo_len));
  r.u64();
  r.pos++;  // optimizer flag
  r.u64();
  uint32_t count = r.u32();
  std::vector<std::pair<std::string, TensorF>> loaded;
  for (uint32_t i = 0; i < count; ++i) {
    TensorF t = r.tensor();
    loaded.emplace_back(r.last_name, std::move(t));
  }
  std::map<std::string, const TensorF*> by_name;
  for (auto& [name, t] : loaded) by_name[name] = &t;
  std::vector<std::string> bad;
  model.visit_params([&](const std::string& name, Var<float>& v) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      bad.push_back(name + ": missing from checkpoint");
      return;
    }
    if (it->second->shape() != v->value.shape()) {
      bad.push_back(name + ": checkpoint " + shape_str(it->second->shape()) + " vs model " +
                    shape_str(v->value.shape()));
      return;
    }
    v->value = *it->second;
  });
  if (!bad.empty()) {
    std::string msg = "checkpoint: shape mismatches loading '" + path + "':";
    for (auto& b : bad) msg += "\n  " + b;
    throw std::runtime_error(msg);
  }
}

}  // namespace geotdm
