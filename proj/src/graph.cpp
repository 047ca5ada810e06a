#include "swiftpan/graph.hpp"

#include "swiftpan/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace swiftpan {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t ParamRegistry::add(std::string name, Tensor value) {
    if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    entries_.push_back({std::move(name), std::move(value), true});
    return entries_.size() - 1;
}

std::optional<std::size_t> ParamRegistry::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return i;
    return std::nullopt;
}

std::size_t ParamRegistry::index_of(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw ConfigError("unknown parameter '" + name + "'");
}

std::size_t ParamRegistry::total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.scalar_count();
    return n;
}

std::size_t ParamRegistry::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.scalar_count();
    return n;
}

std::vector<std::string> ParamRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

void ParamRegistry::set_all_trainable(bool trainable) {
    for (auto& e : entries_) e.trainable = trainable;
}

bool ParamRegistry::identical(const ParamRegistry& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name || !entries_[i].value.identical(other.entries_[i].value))
            return false;
    }
    return true;
}

std::string op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Relu: return "relu";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Concat: return "concat";
        case OpKind::Mean: return "mean";
        case OpKind::L1Loss: return "l1_loss";
    }
    return "?";
}

NodeId Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    values_.emplace_back();
    evaluated_upto_ = -1;
    have_grads_ = false;
    return last();
}

void Graph::check_ref(NodeId id, const char* op) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
        throw ShapeError(std::string(op) + ": reference to unknown node " + std::to_string(id));
    }
}

NodeId Graph::input(std::string name) {
    for (const auto& n : nodes_)
        if (n.kind == OpKind::Input && n.name == name) throw ConfigError("duplicate graph input '" + name + "'");
    return push({OpKind::Input, {}, std::move(name)});
}

NodeId Graph::param(std::string name, Tensor init) {
    const auto idx = params_.add(std::move(name), std::move(init));
    param_grads_.emplace_back();
    return push({OpKind::Param, {}, {}, idx});
}

NodeId Graph::conv2d(NodeId x, NodeId weight, NodeId bias, int padding) {
    check_ref(x, "conv2d");
    check_ref(weight, "conv2d");
    check_ref(bias, "conv2d");
    if (padding < 0) throw ShapeError("conv2d: negative padding");
    return push({OpKind::Conv2d, {x, weight, bias}, {}, 0, padding});
}

NodeId Graph::relu(NodeId x) {
    check_ref(x, "relu");
    return push({OpKind::Relu, {x}});
}

NodeId Graph::add(NodeId a, NodeId b) {
    check_ref(a, "add");
    check_ref(b, "add");
    return push({OpKind::Add, {a, b}});
}

NodeId Graph::sub(NodeId a, NodeId b) {
    check_ref(a, "sub");
    check_ref(b, "sub");
    return push({OpKind::Sub, {a, b}});
}

NodeId Graph::mul(NodeId a, NodeId b) {
    check_ref(a, "mul");
    check_ref(b, "mul");
    return push({OpKind::Mul, {a, b}});
}

NodeId Graph::concat(std::vector<NodeId> xs) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    for (NodeId x : xs) check_ref(x, "concat");
    return push({OpKind::Concat, std::move(xs)});
}

NodeId Graph::mean(NodeId x) {
    check_ref(x, "mean");
    return push({OpKind::Mean, {x}});
}

NodeId Graph::l1_loss(NodeId pred, NodeId target) {
    check_ref(pred, "l1_loss");
    check_ref(target, "l1_loss");
    return push({OpKind::L1Loss, {pred, target}});
}

const Tensor& Graph::val(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::Param) return params_[n.param].value;
    return values_[id];
}

const Tensor& Graph::value(NodeId id) const {
    check_ref(id, "value");
    if (id > evaluated_upto_) throw StateError("node " + std::to_string(id) + " has not been evaluated");
    return val(id);
}

namespace {

[[noreturn]] void dim_error(NodeId id, OpKind kind, const std::string& detail) {
    throw ShapeError(op_name(kind) + " (node " + std::to_string(id) + "): " + detail);
}

struct ConvGeom {
    int n, cin, h, w, cout, k, pad, ho, wo;
    int patch() const { return cin * k * k; }
    int pixels() const { return ho * wo; }
};

// cols is [cin*k*k, ho*wo] row-major for one image.
void im2col(const float* img, const ConvGeom& g, float* cols) {
    for (int c = 0; c < g.cin; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                float* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.pixels();
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy + ky - g.pad;
                    float* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, 0.0f);
                        continue;
                    }
                    const float* src = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox + kx - g.pad;
                        dst[ox] = (ix < 0 || ix >= g.w) ? 0.0f : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, const ConvGeom& g, float* img) {
    for (int c = 0; c < g.cin; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const float* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.pixels();
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy + ky - g.pad;
                    if (iy < 0 || iy >= g.h) continue;
                    float* dst = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
                    const float* src = row + oy * g.wo;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox + kx - g.pad;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

ConvGeom conv_geometry(NodeId id, const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    if (x.rank() != 4) dim_error(id, OpKind::Conv2d, "input must be [N,C,H,W], got " + dims_to_string(x.dims()));
    if (w.rank() != 4 || w.dim(2) != w.dim(3))
        dim_error(id, OpKind::Conv2d, "weight must be [Cout,Cin,K,K], got " + dims_to_string(w.dims()));
    if (w.dim(1) != x.dim(1))
        dim_error(id, OpKind::Conv2d,
                  "input " + dims_to_string(x.dims()) + " has " + std::to_string(x.dim(1)) +
                      " channels but weight " + dims_to_string(w.dims()) + " expects " + std::to_string(w.dim(1)));
    if (b.rank() != 1 || b.dim(0) != w.dim(0))
        dim_error(id, OpKind::Conv2d,
                  "bias " + dims_to_string(b.dims()) + " does not match weight " + dims_to_string(w.dims()));
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), pad, 0, 0};
    g.ho = g.h + 2 * pad - g.k + 1;
    g.wo = g.w + 2 * pad - g.k + 1;
    if (g.ho <= 0 || g.wo <= 0)
        dim_error(id, OpKind::Conv2d, "kernel " + dims_to_string(w.dims()) + " larger than padded input " +
                                          dims_to_string(x.dims()));
    return g;
}

double l1_sum(std::span<const float> a, std::span<const float> b) {
    if (a.size() <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
        return s;
    }
    const std::size_t half = a.size() / 2;
    return l1_sum(a.first(half), b.first(half)) + l1_sum(a.subspan(half), b.subspan(half));
}

}  // namespace

void Graph::eval(NodeId id, const Feed& inputs) {
    const Node& n = nodes_[id];
    Tensor& out = values_[id];
    switch (n.kind) {
        case OpKind::Param: return;
        case OpKind::Input: {
            auto it = inputs.find(n.name);
            if (it == inputs.end()) throw ShapeError("input (node " + std::to_string(id) + "): missing '" + n.name + "'");
            out = it->second;
            return;
        }
        case OpKind::Conv2d: {
            const Tensor& x = val(n.in[0]);
            const Tensor& w = val(n.in[1]);
            const Tensor& b = val(n.in[2]);
            const ConvGeom g = conv_geometry(id, x, w, b, n.padding);
            out = Tensor({g.n, g.cout, g.ho, g.wo});
            std::vector<float> cols(static_cast<std::size_t>(g.patch()) * g.pixels());
            ConstMapMat wm(w.ptr(), g.cout, g.patch());
            ConstMapMat cm(cols.data(), g.patch(), g.pixels());
            for (int i = 0; i < g.n; ++i) {
                im2col(x.ptr() + static_cast<std::size_t>(i) * g.cin * g.h * g.w, g, cols.data());
                MapMat om(out.ptr() + static_cast<std::size_t>(i) * g.cout * g.pixels(), g.cout, g.pixels());
                om.noalias() = wm * cm;
                for (int c = 0; c < g.cout; ++c) om.row(c).array() += b[c];
            }
            return;
        }
        case OpKind::Relu: {
            const Tensor& x = val(n.in[0]);
            out = Tensor(x.dims());
            for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
            return;
        }
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul: {
            const Tensor& a = val(n.in[0]);
            const Tensor& b = val(n.in[1]);
            if (a.dims() != b.dims())
                dim_error(id, n.kind, "operands " + dims_to_string(a.dims()) + " and " + dims_to_string(b.dims()));
            out = Tensor(a.dims());
            for (std::size_t i = 0; i < a.numel(); ++i) {
                out[i] = n.kind == OpKind::Add ? a[i] + b[i] : n.kind == OpKind::Sub ? a[i] - b[i] : a[i] * b[i];
            }
            return;
        }
        case OpKind::Concat: {
            const Tensor& first = val(n.in[0]);
            if (first.rank() != 4) dim_error(id, n.kind, "operands must be [N,C,H,W], got " + dims_to_string(first.dims()));
            int channels = 0;
            for (NodeId in : n.in) {
                const Tensor& t = val(in);
                if (t.rank() != 4 || t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) || t.dim(3) != first.dim(3))
                    dim_error(id, n.kind, "operand " + dims_to_string(t.dims()) + " incompatible with " +
                                              dims_to_string(first.dims()));
                channels += t.dim(1);
            }
            out = Tensor({first.dim(0), channels, first.dim(2), first.dim(3)});
            const std::size_t plane = static_cast<std::size_t>(first.dim(2)) * first.dim(3);
            float* dst = out.ptr();
            for (int b = 0; b < first.dim(0); ++b) {
                for (NodeId in : n.in) {
                    const Tensor& t = val(in);
                    const std::size_t chunk = plane * t.dim(1);
                    std::copy_n(t.ptr() + b * chunk, chunk, dst);
                    dst += chunk;
                }
            }
            return;
        }
        case OpKind::Mean: {
            out = Tensor::scalar(static_cast<float>(swiftpan::mean(val(n.in[0]))));
            return;
        }
        case OpKind::L1Loss: {
            const Tensor& a = val(n.in[0]);
            const Tensor& b = val(n.in[1]);
            if (a.dims() != b.dims())
                dim_error(id, n.kind, "prediction " + dims_to_string(a.dims()) + " vs target " + dims_to_string(b.dims()));
            out = Tensor::scalar(static_cast<float>(l1_sum(a.data(), b.data()) / static_cast<double>(a.numel())));
            return;
        }
    }
}

const Tensor& Graph::forward(const Feed& inputs, NodeId target) {
    check_ref(target, "forward");
    evaluated_upto_ = -1;
    have_grads_ = false;
    for (NodeId id = 0; id <= target; ++id) eval(id, inputs);
    evaluated_upto_ = target;
    return val(target);
}

std::vector<bool> Graph::grad_needed(NodeId loss) const {
    std::vector<bool> need(loss + 1, false);
    for (NodeId id = 0; id <= loss; ++id) {
        const Node& n = nodes_[id];
        if (n.kind == OpKind::Param) {
            need[id] = params_[n.param].trainable;
        } else {
            for (NodeId in : n.in) need[id] = need[id] || need[in];
        }
    }
    return need;
}

void Graph::backward(NodeId loss) {
    check_ref(loss, "backward");
    if (evaluated_upto_ < loss) throw StateError("backward called before forward reached node " + std::to_string(loss));
    if (val(loss).numel() != 1)
        throw StateError("backward requires a scalar loss, node " + std::to_string(loss) + " is " +
                         dims_to_string(val(loss).dims()));

    for (std::size_t p = 0; p < params_.size(); ++p) param_grads_[p] = Tensor(params_[p].value.dims());
    const auto need = grad_needed(loss);
    std::vector<Tensor> g(loss + 1);
    g[loss] = Tensor::scalar(1.0f);

    auto accum = [&](NodeId id) -> Tensor* {
        if (!need[id]) return nullptr;
        if (g[id].empty()) g[id] = Tensor(val(id).dims());
        return &g[id];
    };

    for (NodeId id = loss; id >= 0; --id) {
        if (!need[id] || g[id].empty()) continue;
        const Node& n = nodes_[id];
        const Tensor& go = g[id];
        switch (n.kind) {
            case OpKind::Input: break;
            case OpKind::Param: param_grads_[n.param] = std::move(g[id]); break;
            case OpKind::Conv2d: {
                const Tensor& x = val(n.in[0]);
                const Tensor& w = val(n.in[1]);
                const ConvGeom g_ = conv_geometry(id, x, w, val(n.in[2]), n.padding);
                Tensor* gx = accum(n.in[0]);
                Tensor* gw = accum(n.in[1]);
                Tensor* gb = accum(n.in[2]);
                std::vector<float> cols(static_cast<std::size_t>(g_.patch()) * g_.pixels());
                std::vector<float> dcols(gx ? cols.size() : 0);
                ConstMapMat wm(w.ptr(), g_.cout, g_.patch());
                for (int i = 0; i < g_.n; ++i) {
                    ConstMapMat gom(go.ptr() + static_cast<std::size_t>(i) * g_.cout * g_.pixels(), g_.cout, g_.pixels());
                    if (gb) {
                        for (int c = 0; c < g_.cout; ++c)
                            (*gb)[c] += static_cast<float>(pairwise_sum(
                                std::span<const float>(gom.row(c).data(), static_cast<std::size_t>(g_.pixels()))));
                    }
                    const float* img = x.ptr() + static_cast<std::size_t>(i) * g_.cin * g_.h * g_.w;
                    if (gw) {
                        im2col(img, g_, cols.data());
                        ConstMapMat cm(cols.data(), g_.patch(), g_.pixels());
                        MapMat gwm(gw->ptr(), g_.cout, g_.patch());
                        gwm.noalias() += gom * cm.transpose();
                    }
                    if (gx) {
                        MapMat dcm(dcols.data(), g_.patch(), g_.pixels());
                        dcm.noalias() = wm.transpose() * gom;
                        col2im_add(dcols.data(), g_, gx->ptr() + static_cast<std::size_t>(i) * g_.cin * g_.h * g_.w);
                    }
                }
                break;
            }
            case OpKind::Relu: {
                if (Tensor* gx = accum(n.in[0])) {
                    const Tensor& y = val(id);
                    for (std::size_t i = 0; i < y.numel(); ++i)
                        if (y[i] > 0.0f) (*gx)[i] += go[i];
                }
                break;
            }
            case OpKind::Add:
            case OpKind::Sub: {
                if (Tensor* ga = accum(n.in[0]))
                    for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i];
                if (Tensor* gb = accum(n.in[1])) {
                    const float s = n.kind == OpKind::Add ? 1.0f : -1.0f;
                    for (std::size_t i = 0; i < go.numel(); ++i) (*gb)[i] += s * go[i];
                }
                break;
            }
            case OpKind::Mul: {
                const Tensor& a = val(n.in[0]);
                const Tensor& b = val(n.in[1]);
                if (Tensor* ga = accum(n.in[0]))
                    for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * b[i];
                if (Tensor* gb = accum(n.in[1]))
                    for (std::size_t i = 0; i < go.numel(); ++i) (*gb)[i] += go[i] * a[i];
                break;
            }
            case OpKind::Concat: {
                const Tensor& y = val(id);
                const std::size_t plane = static_cast<std::size_t>(y.dim(2)) * y.dim(3);
                std::size_t offset = 0;
                for (NodeId in : n.in) {
                    const int ch = val(in).dim(1);
                    if (Tensor* gi = accum(in)) {
                        for (int b = 0; b < y.dim(0); ++b) {
                            const float* src = go.ptr() + b * plane * y.dim(1) + offset;
                            float* dst = gi->ptr() + b * plane * ch;
                            for (std::size_t k = 0; k < plane * ch; ++k) dst[k] += src[k];
                        }
                    }
                    offset += plane * ch;
                }
                break;
            }
            case OpKind::Mean: {
                if (Tensor* gx = accum(n.in[0])) {
                    const float s = go[0] / static_cast<float>(gx->numel());
                    for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += s;
                }
                break;
            }
            case OpKind::L1Loss: {
                const Tensor& a = val(n.in[0]);
                const Tensor& b = val(n.in[1]);
                const float s = go[0] / static_cast<float>(a.numel());
                Tensor* ga = accum(n.in[0]);
                Tensor* gb = accum(n.in[1]);
                for (std::size_t i = 0; i < a.numel(); ++i) {
                    const float d = a[i] - b[i];
                    const float sg = d > 0.0f ? s : (d < 0.0f ? -s : 0.0f);
                    if (ga) (*ga)[i] += sg;
                    if (gb) (*gb)[i] -= sg;
                }
                break;
            }
        }
        if (n.kind != OpKind::Param) g[id] = Tensor();
    }
    have_grads_ = true;
}

const Tensor& Graph::grad(std::size_t param_index) const {
    if (!have_grads_) throw StateError("gradients requested before backward");
    return param_grads_.at(param_index);
}

const Tensor& Graph::grad(const std::string& param_name) const { return grad(params_.index_of(param_name)); }

std::map<std::string, Tensor> Graph::gradients() const {
    std::map<std::string, Tensor> out;
    for (std::size_t p = 0; p < params_.size(); ++p) out.emplace(params_[p].name, grad(p));
    return out;
}

void Graph::clear_cache() {
    for (auto& v : values_) v = Tensor();
    for (auto& gr : param_grads_) gr = Tensor();
    evaluated_upto_ = -1;
    have_grads_ = false;
}

}  // namespace swiftpan
