#include "rec/model.hpp"

#include <fstream>
#include <random>
#include <stdexcept>

namespace rec {

void RecModel::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> proto_init(0.0, 0.1);
  proto_u.assign(protos.proto_users.size(), Tensor::zeros({static_cast<std::size_t>(k)}));
  proto_v.assign(protos.proto_items.size(), Tensor::zeros({static_cast<std::size_t>(k)}));
  for (auto& row : proto_u)
    for (auto& v : row.data) v = proto_init(rng);
  for (auto& row : proto_v)
    for (auto& v : row.data) v = proto_init(rng);
  phi.init(k, rng);
  psi.init(k, rng);
}

std::vector<Tensor*> RecModel::parameters() {
  std::vector<Tensor*> out;
  out.reserve(proto_u.size() + proto_v.size() + 12);
  for (auto& t : proto_u) out.push_back(&t);
  for (auto& t : proto_v) out.push_back(&t);
  for (Tensor* t : phi.tensors()) out.push_back(t);
  for (Tensor* t : psi.tensors()) out.push_back(t);
  return out;
}

std::size_t RecModel::param_count() const {
  return (proto_u.size() + proto_v.size()) * static_cast<std::size_t>(k) +
         phi.param_count() + psi.param_count();
}

double RecModel::normalize_rating(double r) const {
  double range = scale_max - scale_min;
  return range > 0.0 ? (r - mean_rating) / range : r - mean_rating;
}

namespace {

constexpr char kMagic[8] = {'R', 'E', 'C', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void wr(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
void rd(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
}

void wr_tensor(std::ostream& out, const Tensor& t) {
  wr(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) wr(out, static_cast<std::uint64_t>(d));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor rd_tensor(std::istream& in) {
  std::uint32_t rank;
  rd(in, rank);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) {
    std::uint64_t v;
    rd(in, v);
    d = static_cast<std::size_t>(v);
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor");
  return t;
}

void wr_ints(std::ostream& out, const std::vector<int>& v) {
  wr(out, static_cast<std::uint64_t>(v.size()));
  for (int x : v) wr(out, static_cast<std::int32_t>(x));
}

std::vector<int> rd_ints(std::istream& in) {
  std::uint64_t n;
  rd(in, n);
  std::vector<int> v(n);
  for (auto& x : v) {
    std::int32_t t;
    rd(in, t);
    x = t;
  }
  return v;
}

}  // namespace

void save_checkpoint(const RecModel& model, const Adam* adam,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  wr(out, static_cast<std::int32_t>(model.k));
  wr(out, static_cast<std::int32_t>(model.hyper.max_depth));
  wr(out, static_cast<std::int32_t>(model.hyper.evidence_limit));
  const ControlFlags& f = model.hyper.flags;
  for (bool b : {f.cycle_blocking, f.caching, f.cache_none, f.evidence_limit,
                 f.prototype_prioritization, f.telescoping})
    wr(out, static_cast<std::uint8_t>(b));
  wr(out, model.mean_rating);
  wr(out, model.scale_min);
  wr(out, model.scale_max);
  wr_ints(out, model.protos.proto_users);
  wr_ints(out, model.protos.proto_items);
  wr(out, static_cast<std::uint64_t>(model.protos.user_slot.size()));
  wr(out, static_cast<std::uint64_t>(model.protos.item_slot.size()));
  for (const auto& t : model.proto_u) wr_tensor(out, t);
  for (const auto& t : model.proto_v) wr_tensor(out, t);
  for (const Tensor* t : model.phi.tensors()) wr_tensor(out, *t);
  for (const Tensor* t : model.psi.tensors()) wr_tensor(out, *t);
  wr(out, static_cast<std::uint8_t>(adam != nullptr));
  if (adam) {
    Adam& a = *const_cast<Adam*>(adam);
    wr(out, static_cast<std::int64_t>(a.step_count()));
    wr(out, a.lr);
    wr(out, static_cast<std::uint64_t>(a.first_moments().size()));
    for (const auto& t : a.first_moments()) wr_tensor(out, t);
    for (const auto& t : a.second_moments()) wr_tensor(out, t);
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(RecModel& model, Adam* adam, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::int32_t k, md, el;
  rd(in, k);
  rd(in, md);
  rd(in, el);
  model.k = k;
  model.hyper.max_depth = md;
  model.hyper.evidence_limit = el;
  ControlFlags& f = model.hyper.flags;
  for (bool* b : {&f.cycle_blocking, &f.caching, &f.cache_none,
                  &f.evidence_limit, &f.prototype_prioritization,
                  &f.telescoping}) {
    std::uint8_t v;
    rd(in, v);
    *b = v != 0;
  }
  rd(in, model.mean_rating);
  rd(in, model.scale_min);
  rd(in, model.scale_max);
  model.protos.proto_users = rd_ints(in);
  model.protos.proto_items = rd_ints(in);
  std::uint64_t nu, ni;
  rd(in, nu);
  rd(in, ni);
  model.protos.user_slot.assign(nu, -1);
  model.protos.item_slot.assign(ni, -1);
  for (std::size_t s = 0; s < model.protos.proto_users.size(); ++s)
    model.protos.user_slot[model.protos.proto_users[s]] = static_cast<int>(s);
  for (std::size_t s = 0; s < model.protos.proto_items.size(); ++s)
    model.protos.item_slot[model.protos.proto_items[s]] = static_cast<int>(s);
  model.proto_u.clear();
  model.proto_v.clear();
  for (std::size_t i = 0; i < model.protos.proto_users.size(); ++i)
    model.proto_u.push_back(rd_tensor(in));
  for (std::size_t i = 0; i < model.protos.proto_items.size(); ++i)
    model.proto_v.push_back(rd_tensor(in));
  model.phi.k = model.psi.k = model.k;
  for (Tensor* t : model.phi.tensors()) *t = rd_tensor(in);
  for (Tensor* t : model.psi.tensors()) *t = rd_tensor(in);
  std::uint8_t has_adam;
  rd(in, has_adam);
  if (has_adam && adam) {
    std::int64_t t;
    rd(in, t);
    adam->step_counter() = t;
    rd(in, adam->lr);
    std::uint64_t n;
    rd(in, n);
    adam->first_moments().clear();
    adam->second_moments().clear();
    for (std::uint64_t i = 0; i < n; ++i)
      adam->first_moments().push_back(rd_tensor(in));
    for (std::uint64_t i = 0; i < n; ++i)
      adam->second_moments().push_back(rd_tensor(in));
  }
}

}  // namespace rec
