#include "swiftpan/metrics.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"
#include "swiftpan/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace swiftpan {

namespace {

void same_dims(const Tensor& a, const Tensor& b, const char* who) {
    if (a.dims() != b.dims() || a.rank() != 3)
        throw ShapeError(std::string(who) + ": expected equal [C,H,W] dims, got " + dims_to_string(a.dims()) + " and " +
                         dims_to_string(b.dims()));
}

struct Moments {
    double mean_a = 0, mean_b = 0, var_a = 0, var_b = 0, cov = 0;
};

Moments moments(std::span<const double> a, std::span<const double> b) {
    Moments m;
    const double n = static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        m.mean_a += a[i];
        m.mean_b += b[i];
    }
    m.mean_a /= n;
    m.mean_b /= n;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - m.mean_a, db = b[i] - m.mean_b;
        m.var_a += da * da;
        m.var_b += db * db;
        m.cov += da * db;
    }
    m.var_a /= n;
    m.var_b /= n;
    m.cov /= n;
    return m;
}

std::vector<double> plane(const Tensor& chw, int c) {
    const std::size_t n = static_cast<std::size_t>(chw.dim(1)) * chw.dim(2);
    return std::vector<double>(chw.ptr() + c * n, chw.ptr() + (c + 1) * n);
}

// Tiles of side `block` (clamped to the image) in raster order.
template <typename Fn>
void for_each_block(int h, int w, int block, Fn&& fn) {
    const int bh = std::min(block, h), bw = std::min(block, w);
    for (int y0 = 0; y0 + bh <= h; y0 += bh)
        for (int x0 = 0; x0 + bw <= w; x0 += bw) fn(y0, x0, bh, bw);
}

}  // namespace

double sam(const Tensor& pred, const Tensor& gt) {
    same_dims(pred, gt, "sam");
    const int bands = gt.dim(0), h = gt.dim(1), w = gt.dim(2);
    double total = 0.0;
    long used = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double np = 0, ng = 0;
            for (int b = 0; b < bands; ++b) {
                const double p = pred.at(b, y, x), g = gt.at(b, y, x);
                np += p * p;
                ng += g * g;
            }
            if (np == 0.0 || ng == 0.0) continue;
            // 2 atan2(|u - v|, |u + v|) on unit vectors stays accurate near 0
            np = std::sqrt(np);
            ng = std::sqrt(ng);
            double diff = 0, sum = 0;
            for (int b = 0; b < bands; ++b) {
                const double u = pred.at(b, y, x) / np, v = gt.at(b, y, x) / ng;
                diff += (u - v) * (u - v);
                sum += (u + v) * (u + v);
            }
            total += 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
            ++used;
        }
    }
    if (used == 0) throw NumericError("sam: every pixel has a zero spectral vector");
    return total / static_cast<double>(used) * 180.0 / std::numbers::pi;
}

double ergas(const Tensor& pred, const Tensor& gt, int ratio) {
    same_dims(pred, gt, "ergas");
    if (ratio < 1) throw ConfigError("ergas: ratio must be >= 1");
    const int bands = gt.dim(0);
    double acc = 0.0;
    for (int b = 0; b < bands; ++b) {
        const auto p = plane(pred, b);
        const auto g = plane(gt, b);
        double mse = 0.0, mu = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            mse += (p[i] - g[i]) * (p[i] - g[i]);
            mu += g[i];
        }
        mse /= static_cast<double>(g.size());
        mu /= static_cast<double>(g.size());
        if (mu == 0.0) throw NumericError("ergas: band " + std::to_string(b) + " of the reference has zero mean");
        acc += mse / (mu * mu);
    }
    return 100.0 / ratio * std::sqrt(acc / bands);
}

namespace {

std::vector<double> laplacian_valid(const std::vector<double>& img, int h, int w) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(h - 2) * (w - 2));
    for (int y = 1; y + 1 < h; ++y) {
        for (int x = 1; x + 1 < w; ++x) {
            double s = 8.0 * img[static_cast<std::size_t>(y) * w + x];
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (dy || dx) s -= img[static_cast<std::size_t>(y + dy) * w + x + dx];
            out.push_back(s);
        }
    }
    return out;
}

}  // namespace

double scc(const Tensor& pred, const Tensor& gt) {
    same_dims(pred, gt, "scc");
    const int h = gt.dim(1), w = gt.dim(2);
    if (h < 3 || w < 3) throw ShapeError("scc: image smaller than the 3x3 high-pass kernel");
    double total = 0.0;
    int used = 0;
    for (int b = 0; b < gt.dim(0); ++b) {
        const auto m = moments(laplacian_valid(plane(pred, b), h, w), laplacian_valid(plane(gt, b), h, w));
        if (m.var_a <= 0.0 || m.var_b <= 0.0) continue;
        total += m.cov / std::sqrt(m.var_a * m.var_b);
        ++used;
    }
    if (used == 0) throw NumericError("scc: every band has zero high-pass variance");
    return total / used;
}

std::vector<double> hypercomplex_conj(std::span<const double> a) {
    std::vector<double> out(a.begin(), a.end());
    for (std::size_t i = 1; i < out.size(); ++i) out[i] = -out[i];
    return out;
}

std::vector<double> hypercomplex_mul(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = a.size();
    if (b.size() != n || n == 0 || (n & (n - 1)) != 0)
        throw ShapeError("hypercomplex_mul: operands must share a power-of-two length");
    if (n == 1) return {a[0] * b[0]};
    // (p, q)(r, s) = (p r - s* q, s p + q r*)
    const std::size_t h = n / 2;
    const auto p = a.first(h), q = a.subspan(h), r = b.first(h), s = b.subspan(h);
    const auto s_conj = hypercomplex_conj(s);
    const auto r_conj = hypercomplex_conj(r);
    const auto pr = hypercomplex_mul(p, r);
    const auto sq = hypercomplex_mul(s_conj, q);
    const auto sp = hypercomplex_mul(s, p);
    const auto qr = hypercomplex_mul(q, r_conj);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < h; ++i) {
        out[i] = pr[i] - sq[i];
        out[h + i] = sp[i] + qr[i];
    }
    return out;
}

double q2n(const Tensor& pred, const Tensor& gt, int block) {
    same_dims(pred, gt, "q2n");
    if (block < 2) throw ConfigError("q2n: block must be >= 2");
    const int bands = gt.dim(0), h = gt.dim(1), w = gt.dim(2);
    std::size_t dim = 1;
    while (dim < static_cast<std::size_t>(bands)) dim *= 2;

    auto norm2 = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return s;
    };

    double total = 0.0;
    int used = 0;
    for_each_block(h, w, block, [&](int y0, int x0, int bh, int bw) {
        const double n = static_cast<double>(bh) * bw;
        std::vector<double> mu_p(dim, 0.0), mu_g(dim, 0.0), cross(dim, 0.0);
        double e_p = 0.0, e_g = 0.0;
        std::vector<double> zp(dim, 0.0), zg(dim, 0.0);
        for (int y = y0; y < y0 + bh; ++y) {
            for (int x = x0; x < x0 + bw; ++x) {
                for (int b = 0; b < bands; ++b) {
                    zp[b] = pred.at(b, y, x);
                    zg[b] = gt.at(b, y, x);
                }
                const auto prod = hypercomplex_mul(zp, hypercomplex_conj(zg));
                for (std::size_t k = 0; k < dim; ++k) {
                    mu_p[k] += zp[k];
                    mu_g[k] += zg[k];
                    cross[k] += prod[k];
                }
                e_p += norm2(zp);
                e_g += norm2(zg);
            }
        }
        for (std::size_t k = 0; k < dim; ++k) {
            mu_p[k] /= n;
            mu_g[k] /= n;
            cross[k] /= n;
        }
        const auto mm = hypercomplex_mul(mu_p, hypercomplex_conj(mu_g));
        for (std::size_t k = 0; k < dim; ++k) cross[k] -= mm[k];
        const double var_p = std::max(0.0, e_p / n - norm2(mu_p));
        const double var_g = std::max(0.0, e_g / n - norm2(mu_g));
        const double mp2 = norm2(mu_p), mg2 = norm2(mu_g);
        const double denom = (var_p + var_g) * (mp2 + mg2);
        if (denom <= 0.0 || var_p <= 0.0 || var_g <= 0.0) return;
        total += 4.0 * std::sqrt(norm2(cross)) * std::sqrt(mp2 * mg2) / denom;
        ++used;
    });
    if (used == 0) throw NumericError("q2n: every block is degenerate");
    return total / used;
}

double q_index(const Tensor& a, const Tensor& b, int block) {
    if (a.dims() != b.dims()) throw ShapeError("q_index: dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
    if (a.rank() != 3 || a.dim(0) != 1) throw ShapeError("q_index: expects a single [1,H,W] band");
    const int h = a.dim(1), w = a.dim(2);
    double total = 0.0;
    int used = 0;
    for_each_block(h, w, block, [&](int y0, int x0, int bh, int bw) {
        std::vector<double> va, vb;
        for (int y = y0; y < y0 + bh; ++y)
            for (int x = x0; x < x0 + bw; ++x) {
                va.push_back(a[static_cast<std::size_t>(y) * w + x]);
                vb.push_back(b[static_cast<std::size_t>(y) * w + x]);
            }
        const auto m = moments(va, vb);
        const double denom = (m.var_a + m.var_b) * (m.mean_a * m.mean_a + m.mean_b * m.mean_b);
        if (denom <= 0.0) return;
        total += 4.0 * m.cov * m.mean_a * m.mean_b / denom;
        ++used;
    });
    if (used == 0) throw NumericError("q_index: every block is degenerate");
    return total / used;
}

namespace {

int resolution_ratio(const Tensor& hi, const Tensor& lo, const char* who) {
    if (hi.rank() != 3 || lo.rank() != 3 || lo.dim(1) == 0 || hi.dim(1) % lo.dim(1) != 0 ||
        hi.dim(2) % lo.dim(2) != 0 || hi.dim(1) / lo.dim(1) != hi.dim(2) / lo.dim(2))
        throw ShapeError(std::string(who) + ": " + dims_to_string(hi.dims()) + " is not an integer multiple of " +
                         dims_to_string(lo.dims()));
    return hi.dim(1) / lo.dim(1);
}

}  // namespace

double d_lambda(const Tensor& pred, const Tensor& lrms, int block) {
    const int ratio = resolution_ratio(pred, lrms, "d_lambda");
    if (pred.dim(0) != lrms.dim(0)) throw ShapeError("d_lambda: band counts differ");
    const int bands = pred.dim(0);
    if (bands < 2) throw ShapeError("d_lambda: needs at least 2 bands");
    const int lo_block = std::max(2, block / ratio);
    double acc = 0.0;
    int pairs = 0;
    for (int l = 0; l < bands; ++l) {
        for (int r = l + 1; r < bands; ++r) {
            const double qh = q_index(channel(pred, l), channel(pred, r), block);
            const double ql = q_index(channel(lrms, l), channel(lrms, r), lo_block);
            acc += std::pow(std::abs(qh - ql), kQnrP);
            ++pairs;
        }
    }
    return std::pow(acc / pairs, 1.0 / kQnrP);
}

double d_s(const Tensor& pred, const Tensor& lrms, const Tensor& pan, int block) {
    const int ratio = resolution_ratio(pred, lrms, "d_s");
    if (pred.dim(0) != lrms.dim(0)) throw ShapeError("d_s: band counts differ");
    if (pan.rank() != 3 || pan.dim(0) != 1 || pan.dim(1) != pred.dim(1) || pan.dim(2) != pred.dim(2))
        throw ShapeError("d_s: pan " + dims_to_string(pan.dims()) + " does not match prediction " +
                         dims_to_string(pred.dims()));
    const Tensor pan_lr = average_pool(pan, lrms.dim(1), lrms.dim(2));
    const int lo_block = std::max(2, block / ratio);
    double acc = 0.0;
    for (int b = 0; b < pred.dim(0); ++b) {
        const double qh = q_index(channel(pred, b), pan, block);
        const double ql = q_index(channel(lrms, b), pan_lr, lo_block);
        acc += std::pow(std::abs(qh - ql), kQnrQ);
    }
    return std::pow(acc / pred.dim(0), 1.0 / kQnrQ);
}

std::string protocol_name(Protocol p) { return p == Protocol::Reduced ? "reduced" : "full"; }

Protocol parse_protocol(const std::string& name) {
    if (name == "reduced") return Protocol::Reduced;
    if (name == "full") return Protocol::Full;
    throw ConfigError("unknown protocol '" + name + "' (expected reduced or full)");
}

std::vector<std::string> protocol_columns(Protocol p) {
    if (p == Protocol::Reduced) return {"SAM", "ERGAS", "SCC", "Q2N"};
    return {"D_lambda", "D_s", "HQNR"};
}

EvalReport make_report(Protocol protocol, std::vector<EvalRow> rows) {
    EvalReport r;
    r.protocol = protocol;
    r.columns = protocol_columns(protocol);
    r.rows = std::move(rows);
    const std::size_t k = r.columns.size();
    r.mean.assign(k, 0.0);
    r.std.assign(k, 0.0);
    if (r.rows.empty()) return r;
    const double n = static_cast<double>(r.rows.size());
    for (const auto& row : r.rows) {
        if (row.values.size() != k) throw ShapeError("make_report: row width differs from column count");
        for (std::size_t c = 0; c < k; ++c) r.mean[c] += row.values[c];
    }
    for (std::size_t c = 0; c < k; ++c) r.mean[c] /= n;
    for (const auto& row : r.rows)
        for (std::size_t c = 0; c < k; ++c) r.std[c] += (row.values[c] - r.mean[c]) * (row.values[c] - r.mean[c]);
    for (std::size_t c = 0; c < k; ++c) r.std[c] = std::sqrt(r.std[c] / n);
    return r;
}

std::vector<double> evaluate_scene(const Tensor& pred, const ScenePair& scene, Protocol protocol, int ratio) {
    if (protocol == Protocol::Reduced)
        return {sam(pred, scene.gt), ergas(pred, scene.gt, ratio), scc(pred, scene.gt), q2n(pred, scene.gt)};
    const double dl = d_lambda(pred, scene.lrms);
    const double ds = d_s(pred, scene.lrms, scene.pan);
    return {dl, ds, hqnr(dl, ds)};
}

EvalReport evaluate(Model& model, std::span<const ScenePair> scenes, Protocol protocol) {
    std::vector<EvalRow> rows;
    for (const auto& s : scenes) rows.push_back({s.id, evaluate_scene(model.predict(s), s, protocol, model.config().ratio)});
    return make_report(protocol, std::move(rows));
}

std::string metric_constants_header() {
    std::ostringstream os;
    os << "# q_block=" << kQBlock << " q_block_lowres=q_block/ratio dlambda_p=" << format_double(kQnrP)
       << " ds_q=" << format_double(kQnrQ) << " scc_highpass=laplacian3x3_8n pan_degrade=avgpool std=population";
    return os.str();
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ostringstream os;
    os << metric_constants_header() << " protocol=" << protocol_name(report.protocol) << '\n';
    os << "id";
    for (const auto& c : report.columns) os << ',' << c;
    os << '\n';
    for (const auto& row : report.rows) {
        os << row.id;
        for (double v : row.values) os << ',' << format_double(v);
        os << '\n';
    }
    os << "mean";
    for (double v : report.mean) os << ',' << format_double(v);
    os << "\nstd";
    for (double v : report.std) os << ',' << format_double(v);
    os << '\n';
    write_text(path, os.str());
}

}  // namespace swiftpan
