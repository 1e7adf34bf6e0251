// SPDX-License-Identifier: Apache-2.0
#include "volsurf/synthgen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace volsurf::synthgen {

using nlohmann::json;

pricing::HestonParams sample_heston_params(Rng& rng) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        pricing::HestonParams p{rng.uniform(0.01, 0.16), rng.uniform(0.5, 5.0),
                                rng.uniform(0.01, 0.16), rng.uniform(0.1, 0.8),
                                rng.uniform(-0.9, -0.1)};
        if (p.feller_ok())
            return p;
    }
    throw ConvergenceError("sample_heston_params: rejection budget exhausted");
}

surface::VolSurface generate_surface(const pricing::HestonParams& p, const surface::SurfaceGrid& g,
                                     const pricing::MarketContext& ctx) {
    p.validate();
    g.validate();
    surface::VolSurface s(g.n_tenors(), g.n_strikes());

    for (int i = 0; i < g.n_tenors(); ++i) {
        for (int j = 0; j < g.n_strikes(); ++j) {
            const double strike = g.strikes[j];
            const bool is_call = strike >= ctx.forward;
            const pricing::OptionSpec opt{strike, g.tenors[i], is_call};
            try {
                double price = pricing::heston_price(p, ctx, opt);
                // Deep-wing time values can fall below the absolute quadrature
                // tolerance; clamp into the interior of the no-arbitrage band
                // so the inversion stays total.
                const double df = std::exp(-ctx.rate * opt.tenor);
                const double intrinsic =
                    df * std::max(is_call ? ctx.forward - strike : strike - ctx.forward, 0.0);
                const double cap = df * (is_call ? ctx.forward : strike);
                price = std::clamp(price, intrinsic + 1e-12, cap * (1.0 - 1e-12));
                s.iv(i, j) = pricing::implied_vol(price, ctx, opt);
            } catch (const Error& e) {
                throw ConvergenceError("generate_surface: grid point (" + std::to_string(i) + "," +
                                       std::to_string(j) + ") tenor " + std::to_string(g.tenors[i]) +
                                       " strike " + std::to_string(strike) + ": " + e.what());
            }
        }
    }
    return s;
}

namespace {

Dataset generate_impl(int n, std::uint64_t seed, const std::string& split_name, bool parallel) {
    if (n < 1)
        throw InvalidInputError("generate_dataset: n must be >= 1");
    Dataset d;
    d.grid = surface::make_grid();
    d.seed = seed;
    d.split_name = split_name;
    d.surfaces.resize(n);
    d.params.resize(n);
    const pricing::MarketContext ctx{100.0, 0.0, 0.0}; // forward-grid generation, zero rates

    std::string first_error;
    int first_error_idx = n;

    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int idx = 0; idx < n; ++idx) {
            try {
                Rng rng = Rng::substream(seed, {stream::kHestonParams, static_cast<std::uint64_t>(idx)});
                d.params[idx] = sample_heston_params(rng);
                d.surfaces[idx] = generate_surface(d.params[idx], d.grid, ctx);
            } catch (const std::exception& e) {
#pragma omp critical
                if (idx < first_error_idx) {
                    first_error_idx = idx;
                    first_error = e.what();
                }
            }
        }
    } else {
        for (int idx = 0; idx < n; ++idx) {
            Rng rng = Rng::substream(seed, {stream::kHestonParams, static_cast<std::uint64_t>(idx)});
            d.params[idx] = sample_heston_params(rng);
            d.surfaces[idx] = generate_surface(d.params[idx], d.grid, ctx);
        }
    }
    if (first_error_idx < n)
        throw ConvergenceError("generate_dataset: surface " + std::to_string(first_error_idx) +
                               ": " + first_error);
    return d;
}

constexpr char kMagic[8] = {'V', 'O', 'L', 'S', 'R', 'F', 'D', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void put_f64(std::string& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

double get_f64(const unsigned char* p) { return std::bit_cast<double>(get_u64(p)); }

} // namespace

Dataset generate_dataset(int n, std::uint64_t seed, const std::string& split_name, bool parallel) {
    return generate_impl(n, seed, split_name, parallel);
}

Dataset generate_dataset_serial(int n, std::uint64_t seed, const std::string& split_name) {
    return generate_impl(n, seed, split_name, false);
}

void save_dataset(const Dataset& d, const std::string& path) {
    if (!d.params.empty() && d.params.size() != d.surfaces.size())
        throw InvalidInputError("save_dataset: params/surfaces length mismatch");
    const int rows = d.grid.n_tenors(), cols = d.grid.n_strikes();
    for (const auto& s : d.surfaces)
        if (s.iv.rows() != rows || s.iv.cols() != cols)
            throw InvalidInputError("save_dataset: surface does not match grid");

    json header;
    header["grid"] = {{"tenors", d.grid.tenors},
                      {"strikes", d.grid.strikes},
                      {"forward", d.grid.forward}};
    header["seed"] = d.seed;
    header["count"] = d.surfaces.size();
    header["split_name"] = d.split_name;
    if (!d.params.empty()) {
        json params = json::array();
        for (const auto& p : d.params)
            params.push_back({p.v0, p.kappa, p.theta, p.xi, p.rho});
        header["params"] = std::move(params);
    }
    const std::string header_str = header.dump();

    std::string payload;
    payload.reserve(d.surfaces.size() * rows * cols * 8);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& s : d.surfaces)
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                put_f64(payload, s.target_mask(i, j) ? s.iv(i, j) : nan);

    std::string out;
    out.append(kMagic, 8);
    put_u32(out, kFormatVersion);
    put_u64(out, header_str.size());
    out += header_str;
    out += payload;
    put_u64(out, fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw DataError("save_dataset: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f)
        throw DataError("save_dataset: write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw DataError("load_dataset: cannot open '" + path + "'");
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (blob.size() < 20 || std::memcmp(blob.data(), kMagic, 8) != 0)
        throw FormatError("load_dataset: bad magic in '" + path + "'");
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    const std::uint32_t version = get_u32(bytes + 8);
    if (version != kFormatVersion)
        throw FormatError("load_dataset: unsupported format version " + std::to_string(version));
    const std::uint64_t header_len = get_u64(bytes + 12);
    if (blob.size() < 20 + header_len)
        throw FormatError("load_dataset: truncated header in '" + path + "'");

    json header;
    try {
        header = json::parse(blob.substr(20, header_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_dataset: header parse error: ") + e.what());
    }

    Dataset d;
    try {
        d.grid.tenors = header.at("grid").at("tenors").get<std::vector<double>>();
        d.grid.strikes = header.at("grid").at("strikes").get<std::vector<double>>();
        d.grid.forward = header.at("grid").at("forward").get<double>();
        d.seed = header.at("seed").get<std::uint64_t>();
        d.split_name = header.value("split_name", std::string{});
        if (header.contains("params"))
            for (const auto& row : header.at("params"))
                d.params.push_back({row.at(0).get<double>(), row.at(1).get<double>(),
                                    row.at(2).get<double>(), row.at(3).get<double>(),
                                    row.at(4).get<double>()});
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_dataset: malformed header: ") + e.what());
    }
    d.grid.log_moneyness.resize(d.grid.strikes.size());
    for (std::size_t j = 0; j < d.grid.strikes.size(); ++j)
        d.grid.log_moneyness[j] = std::log(d.grid.strikes[j] / d.grid.forward);
    d.grid.validate();

    const std::size_t count = header.at("count").get<std::size_t>();
    const int rows = d.grid.n_tenors(), cols = d.grid.n_strikes();
    const std::size_t payload_len = count * rows * cols * 8;
    if (blob.size() != 20 + header_len + payload_len + 8)
        throw FormatError("load_dataset: payload size mismatch in '" + path + "'");

    const unsigned char* payload = bytes + 20 + header_len;
    const std::uint64_t expect = get_u64(payload + payload_len);
    if (fnv1a(payload, payload_len) != expect)
        throw ChecksumError("load_dataset: payload checksum mismatch in '" + path + "'");

    d.surfaces.resize(count);
    std::size_t off = 0;
    for (std::size_t sidx = 0; sidx < count; ++sidx) {
        surface::VolSurface s(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j, off += 8) {
                const double v = get_f64(payload + off);
                if (std::isfinite(v)) {
                    s.iv(i, j) = v;
                    s.target_mask(i, j) = 1;
                } else {
                    s.iv(i, j) = 0.0;
                    s.target_mask(i, j) = 0;
                }
            }
        d.surfaces[sidx] = std::move(s);
    }
    return d;
}

void export_csv(const Dataset& d, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f)
        throw DataError("export_csv: cannot open '" + path + "'");
    f << "surface_id,tenor,strike,log_moneyness,iv\n";
    char buf[512];
    for (int sidx = 0; sidx < d.size(); ++sidx) {
        const auto& s = d.surfaces[sidx];
        for (int i = 0; i < d.grid.n_tenors(); ++i)
            for (int j = 0; j < d.grid.n_strikes(); ++j) {
                if (s.target_mask(i, j))
                    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", sidx,
                                  d.grid.tenors[i], d.grid.strikes[j], d.grid.log_moneyness[j],
                                  s.iv(i, j));
                else
                    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,\n", sidx,
                                  d.grid.tenors[i], d.grid.strikes[j], d.grid.log_moneyness[j]);
                f << buf;
            }
    }
    if (!f)
        throw DataError("export_csv: write failed for '" + path + "'");
}

} // namespace volsurf::synthgen
