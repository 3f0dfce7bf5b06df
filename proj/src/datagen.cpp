#include "gwgrid/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <vector>

#include "gwgrid/stream.hpp"

namespace gwgrid {

namespace {

constexpr std::uint64_t kTagKinship = 1;
constexpr std::uint64_t kTagXl = 2;
constexpr std::uint64_t kTagSnps = 3;
constexpr std::uint64_t kTagTraits = 4;
constexpr std::uint64_t kTagH2 = 5;
constexpr std::uint64_t kTagSigma2 = 6;

// One independently seeded deviate source per dataset component.
class DrawStream {
 public:
  DrawStream(std::uint64_t seed, std::uint64_t tag)
      : rng_(splitmix64(seed ^ tag)) {}

  double normal() { return standard_normal_quantile(uniform_from_bits(rng_())); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform_from_bits(rng_());
  }

  void fill_normal(double* dst, std::int64_t count) {
    for (std::int64_t i = 0; i < count; ++i) dst[i] = normal();
  }

 private:
  std::mt19937_64 rng_;
};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const char* kinship_model_name(KinshipModel model) {
  switch (model) {
    case KinshipModel::identity: return "identity";
    case KinshipModel::diagonal: return "diagonal";
    case KinshipModel::random_spd: return "random-spd";
  }
  throw DimensionError("unknown kinship model value");
}

KinshipModel parse_kinship_model(const std::string& name) {
  if (name == "identity") return KinshipModel::identity;
  if (name == "diagonal") return KinshipModel::diagonal;
  if (name == "random-spd") return KinshipModel::random_spd;
  throw DimensionError("unknown kinship model '" + name +
                       "' (expected identity, diagonal, or random-spd)");
}

void GenSpec::validate() const {
  dims.validate();
  if (!std::isfinite(condition) || condition < 1.0) {
    throw DimensionError("condition must be finite and >= 1");
  }
  if (!(h2_min >= 0.0) || !(h2_max < 1.0) || !(h2_min <= h2_max)) {
    throw DimensionError("h2 range must satisfy 0 <= min <= max < 1");
  }
  if (!(sigma2_min > 0.0) || !(sigma2_min <= sigma2_max) ||
      !std::isfinite(sigma2_max)) {
    throw DimensionError("sigma2 range must satisfy 0 < min <= max < inf");
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double uniform_from_bits(std::uint64_t bits) {
  // (k + 0.5) * 2^-52 for k in [0, 2^52): every value is (2k+1) * 2^-53 with
  // an odd 53-bit numerator, hence exactly representable — the ends of the
  // unit interval are never produced and 1 - u is exact (keeping the normal
  // quantile's reflection antisymmetric).  A 53-bit variant would round its
  // topmost value up to exactly 1.0.
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

namespace {

// Rational approximation for the lower half, |error| < 1.2e-9 before
// refinement.  Argument must lie in (0, 0.5].
double quantile_lower_half(double p) {
  constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                           -2.759285104469687e+02, 1.383577518672690e+02,
                           -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                           -1.556989798598866e+02, 6.680131188771972e+01,
                           -1.328068155288572e+01};
  constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                           -2.400758277161838e+00, -2.549732539343734e+00,
                           4.374664141464968e+00,  2.938163982698783e+00};
  constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                           2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }

  // One Halley step.  With x <= 0 the erfc argument is nonnegative, so the
  // residual is free of cancellation even in the far tail.
  const double half = 0.5 * x * x;
  if (half < 700.0) {
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(half);
    if (std::isfinite(u)) x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

}  // namespace

double standard_normal_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0)) {
    throw DimensionError("normal quantile argument must lie in (0, 1)");
  }
  return p > 0.5 ? -quantile_lower_half(1.0 - p) : quantile_lower_half(p);
}

Eigen::MatrixXd generate_kinship(const GenSpec& spec) {
  spec.validate();
  const std::int64_t n = spec.dims.n;
  switch (spec.kinship) {
    case KinshipModel::identity:
      return Eigen::MatrixXd::Identity(n, n);
    case KinshipModel::diagonal: {
      Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, n);
      for (std::int64_t i = 0; i < n; ++i) phi(i, i) = static_cast<double>(i + 1);
      return phi;
    }
    case KinshipModel::random_spd:
      break;
  }
  if (n == 1) return Eigen::MatrixXd::Identity(1, 1);

  DrawStream draw(spec.seed, kTagKinship);
  Eigen::MatrixXd gauss(n, n);
  draw.fill_normal(gauss.data(), n * n);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  const Eigen::MatrixXd q = qr.householderQ();

  Eigen::VectorXd lambda(n);
  lambda(0) = 1.0;
  lambda(n - 1) = spec.condition;
  const double log_cond = std::log(spec.condition);
  for (std::int64_t i = 1; i + 1 < n; ++i) {
    lambda(i) = std::exp(draw.uniform(0.0, 1.0) * log_cond);
  }

  Eigen::MatrixXd phi = q * lambda.asDiagonal() * q.transpose();
  phi = 0.5 * (phi + phi.transpose()).eval();
  return phi;
}

Dataset generate_in_memory(const GenSpec& spec) {
  spec.validate();
  const std::int64_t n = spec.dims.n;
  Dataset data;
  data.kinship = generate_kinship(spec);

  data.xl.resize(n, spec.dims.p - 1);
  DrawStream(spec.seed, kTagXl).fill_normal(data.xl.data(), data.xl.size());

  data.snps.resize(n, spec.dims.m);
  DrawStream(spec.seed, kTagSnps)
      .fill_normal(data.snps.data(), data.snps.size());

  data.traits.resize(n, spec.dims.t);
  DrawStream(spec.seed, kTagTraits)
      .fill_normal(data.traits.data(), data.traits.size());

  data.h2.resize(spec.dims.t);
  DrawStream h2(spec.seed, kTagH2);
  for (std::int64_t j = 0; j < spec.dims.t; ++j) {
    data.h2(j) = h2.uniform(spec.h2_min, spec.h2_max);
  }
  data.sigma2.resize(spec.dims.t);
  DrawStream sigma2(spec.seed, kTagSigma2);
  for (std::int64_t j = 0; j < spec.dims.t; ++j) {
    data.sigma2(j) = sigma2.uniform(spec.sigma2_min, spec.sigma2_max);
  }
  return data;
}

DatasetPaths DatasetPaths::in_dir(const std::filesystem::path& dir) {
  DatasetPaths paths;
  paths.kinship = dir / "kinship.gwg";
  paths.xl = dir / "xl.gwg";
  paths.snps = dir / "snps.gwg";
  paths.traits = dir / "traits.gwg";
  paths.manifest = dir / "manifest.txt";
  return paths;
}

namespace {

// Streams one normal column payload in bounded slabs; draw order is
// column-major regardless of slab width.
void write_normal_columns(OutputStream& out, DrawStream& draw, std::int64_t n,
                          std::int64_t count) {
  const std::int64_t width = std::clamp<std::int64_t>(
      static_cast<std::int64_t>((4ull << 20) / (static_cast<std::uint64_t>(n) * 8)),
      1, std::max<std::int64_t>(count, 1));
  Eigen::MatrixXd slab(n, width);
  for (std::int64_t j0 = 0; j0 < count; j0 += width) {
    const std::int64_t w = std::min(width, count - j0);
    draw.fill_normal(slab.data(), n * w);
    out.write_columns(j0, w, slab.data());
  }
}

void write_manifest(const std::filesystem::path& path, const GenSpec& spec) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "format=gwgrid-dataset-1\n"
      << "n=" << spec.dims.n << "\n"
      << "p=" << spec.dims.p << "\n"
      << "m=" << spec.dims.m << "\n"
      << "t=" << spec.dims.t << "\n"
      << "seed=" << spec.seed << "\n"
      << "kinship_model=" << kinship_model_name(spec.kinship) << "\n"
      << "condition=" << format_double(spec.condition) << "\n"
      << "h2_min=" << format_double(spec.h2_min) << "\n"
      << "h2_max=" << format_double(spec.h2_max) << "\n"
      << "sigma2_min=" << format_double(spec.sigma2_min) << "\n"
      << "sigma2_max=" << format_double(spec.sigma2_max) << "\n"
      << "kinship_file=kinship.gwg\n"
      << "xl_file=xl.gwg\n"
      << "snps_file=snps.gwg\n"
      << "traits_file=traits.gwg\n";
  if (!out.flush()) throw IoError("failed writing manifest " + path.string());
}

}  // namespace

DatasetPaths generate_dataset(const GenSpec& spec,
                              const std::filesystem::path& dir,
                              RunCounters* counters) {
  spec.validate();
  std::filesystem::create_directories(dir);
  const DatasetPaths paths = DatasetPaths::in_dir(dir);
  const std::int64_t n = spec.dims.n;

  write_operand(paths.kinship, generate_kinship(spec), counters);

  {
    Eigen::MatrixXd xl(n, spec.dims.p - 1);
    DrawStream(spec.seed, kTagXl).fill_normal(xl.data(), xl.size());
    write_operand(paths.xl, xl, counters);
  }

  {
    StreamHeader header;
    header.kind = StreamKind::snp;
    header.dims = {static_cast<std::uint64_t>(n),
                   static_cast<std::uint64_t>(spec.dims.m), 0};
    OutputStream out = OutputStream::create(paths.snps, header, counters);
    DrawStream draw(spec.seed, kTagSnps);
    write_normal_columns(out, draw, n, spec.dims.m);
    out.finalize();
  }

  {
    StreamHeader header;
    header.kind = StreamKind::trait;
    header.dims = {static_cast<std::uint64_t>(n),
                   static_cast<std::uint64_t>(spec.dims.t), 0};
    OutputStream out = OutputStream::create(paths.traits, header, counters);
    DrawStream draw(spec.seed, kTagTraits);
    write_normal_columns(out, draw, n, spec.dims.t);

    std::vector<double> h2(static_cast<std::size_t>(spec.dims.t));
    std::vector<double> sigma2(h2.size());
    DrawStream h2_draw(spec.seed, kTagH2);
    for (double& v : h2) v = h2_draw.uniform(spec.h2_min, spec.h2_max);
    DrawStream sigma2_draw(spec.seed, kTagSigma2);
    for (double& v : sigma2) {
      v = sigma2_draw.uniform(spec.sigma2_min, spec.sigma2_max);
    }
    out.write_trait_scalars(h2.data(), sigma2.data());
    out.finalize();
  }

  write_manifest(paths.manifest, spec);
  return paths;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r\n");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError("manifest line " + std::to_string(lineno) +
                    " is not key=value in " + path.string());
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  auto need = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw IoError("manifest " + path.string() + " is missing key '" + key +
                    "'");
    }
    return it->second;
  };
  auto as_int = [&](const std::string& key) {
    try {
      return static_cast<std::int64_t>(std::stoll(need(key)));
    } catch (const std::logic_error&) {
      throw IoError("manifest value for '" + key + "' is not an integer in " +
                    path.string());
    }
  };
  auto as_double = [&](const std::string& key) {
    try {
      return std::stod(need(key));
    } catch (const std::logic_error&) {
      throw IoError("manifest value for '" + key + "' is not a number in " +
                    path.string());
    }
  };

  if (need("format") != "gwgrid-dataset-1") {
    throw IoError("manifest " + path.string() + " has unsupported format '" +
                  kv["format"] + "'");
  }

  DatasetManifest manifest;
  manifest.spec.dims.n = as_int("n");
  manifest.spec.dims.p = as_int("p");
  manifest.spec.dims.m = as_int("m");
  manifest.spec.dims.t = as_int("t");
  try {
    manifest.spec.seed = std::stoull(need("seed"));
  } catch (const std::logic_error&) {
    throw IoError("manifest value for 'seed' is not an integer in " +
                  path.string());
  }
  manifest.spec.kinship = parse_kinship_model(need("kinship_model"));
  manifest.spec.condition = as_double("condition");
  manifest.spec.h2_min = as_double("h2_min");
  manifest.spec.h2_max = as_double("h2_max");
  manifest.spec.sigma2_min = as_double("sigma2_min");
  manifest.spec.sigma2_max = as_double("sigma2_max");
  manifest.spec.validate();

  const std::filesystem::path dir = path.parent_path();
  manifest.paths.kinship = dir / need("kinship_file");
  manifest.paths.xl = dir / need("xl_file");
  manifest.paths.snps = dir / need("snps_file");
  manifest.paths.traits = dir / need("traits_file");
  manifest.paths.manifest = path;
  return manifest;
}

}  // namespace gwgrid
