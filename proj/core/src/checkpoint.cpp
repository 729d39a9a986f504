#include "cdvae/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "cdvae/errors.hpp"

namespace cdvae {

namespace {

constexpr const char* kMagic = "cdvae-checkpoint";
constexpr int kVersion = 1;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_plan(std::ostream& out, const char* tag, const NetworkPlan& plan) {
  out << tag << ' ' << activation_name(plan.hidden) << ' ' << activation_name(plan.output) << ' ' << plan.sizes.size();
  for (auto s : plan.sizes) out << ' ' << s;
  out << '\n';
}

void write_params(std::ostream& out, const ParamStore& p, const char* prefix) {
  const auto names = p.array_names();
  const auto arrays = p.arrays();
  for (std::size_t a = 0; a < arrays.size(); ++a) {
    out << "array " << prefix << '.' << names[a] << ' ' << arrays[a].size() << '\n';
    out << "values";
    for (double v : arrays[a]) out << ' ' << fmt(v);
    out << '\n';
  }
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::istringstream line(const std::string& expect) {
    std::string text;
    if (!std::getline(in_, text)) throw ParseError("checkpoint truncated: expected '" + expect + "'", offset_);
    offset_ += text.size() + 1;
    std::istringstream ss(text);
    std::string tag;
    ss >> tag;
    if (tag != expect) throw ParseError("checkpoint: expected '" + expect + "', found '" + tag + "'", offset_);
    return ss;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

template <typename T>
T take(std::istringstream& ss, const Reader& r, const char* what) {
  T v{};
  if (!(ss >> v)) throw ParseError(std::string("checkpoint: bad ") + what, r.offset());
  return v;
}

NetworkPlan read_plan(Reader& r, const char* tag) {
  auto ss = r.line(tag);
  NetworkPlan plan;
  plan.hidden = parse_activation(take<std::string>(ss, r, "activation"));
  plan.output = parse_activation(take<std::string>(ss, r, "activation"));
  const auto n = take<std::size_t>(ss, r, "layer count");
  if (n < 2 || n > 64) throw ParseError("checkpoint: bad layer count", r.offset());
  for (std::size_t i = 0; i < n; ++i) plan.sizes.push_back(take<std::size_t>(ss, r, "layer width"));
  plan.validate();
  return plan;
}

void read_params(Reader& r, ParamStore& p, const std::string& prefix) {
  const auto names = p.array_names();
  auto arrays = p.arrays();
  for (std::size_t a = 0; a < arrays.size(); ++a) {
    auto head = r.line("array");
    const auto name = take<std::string>(head, r, "array name");
    if (name != prefix + "." + names[a]) throw ParseError("checkpoint: unexpected array " + name, r.offset());
    const auto n = take<std::size_t>(head, r, "array size");
    if (n != arrays[a].size()) {
      throw ParseError("checkpoint: array " + name + " has " + std::to_string(n) + " values, expected " +
                           std::to_string(arrays[a].size()),
                       r.offset());
    }
    auto body = r.line("values");
    for (std::size_t i = 0; i < n; ++i) arrays[a][i] = take<double>(body, r, "value");
  }
  if (!p.all_finite()) throw ParseError("checkpoint: non-finite parameter in " + prefix, r.offset());
}

}  // namespace

void write_checkpoint(std::ostream& out, const Model& m, std::uint64_t seed) {
  const auto& c = core(m);
  out << kMagic << ' ' << kVersion << '\n';
  out << "kind " << model_kind_name(kind(m)) << '\n';
  out << "seed " << seed << '\n';
  out << "beta " << fmt(c.smoothing.beta()) << '\n';
  out << "nu " << fmt(c.prior.nu) << '\n';
  if (const auto* u = std::get_if<UncodedDVAE>(&m)) {
    out << "code " << u->info_bits << " 1\n";
  } else if (const auto* cm = std::get_if<CodedDVAE>(&m)) {
    out << "code " << cm->code.info_len() << ' ' << cm->code.repeat() << '\n';
  } else {
    const auto& h = std::get<HierCodedDVAE>(m);
    out << "code " << h.branch1.info_len() << ' ' << h.branch1.repeat() << '\n';
    out << "code2 " << h.branch2.info_len() << ' ' << h.branch2.repeat() << '\n';
  }
  write_plan(out, "encoder", c.encoder.plan);
  write_plan(out, "decoder", c.decoder.plan);
  write_params(out, c.encoder.params, "encoder");
  write_params(out, c.decoder.params, "decoder");
  out << "end\n";
  if (!out) throw IoError("checkpoint: write failed");
}

namespace {

Model read_body(Reader& r, std::uint64_t* seed) {
  {
    auto ss = r.line(kMagic);
    if (take<int>(ss, r, "version") != kVersion) throw ParseError("checkpoint: unsupported version", r.offset());
  }
  auto kind_line = r.line("kind");
  const ModelKind k = parse_model_kind(take<std::string>(kind_line, r, "kind"));
  auto seed_line = r.line("seed");
  const auto s = take<std::uint64_t>(seed_line, r, "seed");
  auto beta_line = r.line("beta");
  const double beta = take<double>(beta_line, r, "beta");
  auto nu_line = r.line("nu");
  const double nu = take<double>(nu_line, r, "nu");
  auto code_line = r.line("code");
  const auto M = take<std::size_t>(code_line, r, "code");
  const auto L = take<std::size_t>(code_line, r, "code");
  std::size_t M2 = 0, L2 = 0;
  if (k == ModelKind::kHier) {
    auto c2 = r.line("code2");
    M2 = take<std::size_t>(c2, r, "code2");
    L2 = take<std::size_t>(c2, r, "code2");
  }

  ModelCore base;
  base.smoothing = SmoothingParams(beta);
  base.prior.nu = nu;
  base.prior.validate();
  base.encoder.plan = read_plan(r, "encoder");
  base.decoder.plan = read_plan(r, "decoder");
  base.encoder.params = ParamStore::zeros(base.encoder.plan);
  base.decoder.params = ParamStore::zeros(base.decoder.plan);
  read_params(r, base.encoder.params, "encoder");
  read_params(r, base.decoder.params, "decoder");
  r.line("end");

  Model m = [&]() -> Model {
    switch (k) {
      case ModelKind::kUncoded: {
        UncodedDVAE u{base};
        u.info_bits = M;
        return u;
      }
      case ModelKind::kCoded: {
        CodedDVAE c{base};
        c.code = CodeSpec(M, L);
        return c;
      }
      case ModelKind::kHier: {
        HierCodedDVAE h{base};
        h.branch1 = CodeSpec(M, L);
        h.branch2 = CodeSpec(M2, L2);
        return h;
      }
    }
    throw ParseError("checkpoint: unknown kind", 0);
  }();
  const std::size_t expect_latent = k == ModelKind::kUncoded ? M : (k == ModelKind::kCoded ? M * L : M * L + M2 * L2);
  if (latent_dim(m) != expect_latent || base.decoder.plan.input_dim() != expect_latent ||
      base.decoder.plan.output_dim() != base.encoder.plan.input_dim() || (k == ModelKind::kHier && M2 != M)) {
    throw ParseError("checkpoint: network shapes do not match the code", r.offset());
  }
  if (seed != nullptr) *seed = s;
  return m;
}

}  // namespace

Model read_checkpoint(std::istream& in, std::uint64_t* seed) {
  Reader r(in);
  try {
    return read_body(r, seed);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    // invalid names or shapes inside an otherwise readable file
    throw ParseError(std::string("checkpoint: ") + e.what(), r.offset());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& m, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(out, m, seed);
}

Model load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed) {
  std::ifstream in(path);
  if (!in) throw IoError("missing checkpoint " + path.string());
  return read_checkpoint(in, seed);
}

}  // namespace cdvae
