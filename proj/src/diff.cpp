#include "uadbo/diff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace uadbo::diff {

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

int shape_numel(const std::vector<int>& shape) {
    int n = 1;
    for (int e : shape) {
        if (e <= 0) throw Error(msg("tensor extent must be positive, got ", e));
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<int>(data.size()))
        throw Error(msg("tensor shape ", shape_str(shape), " does not match value count ", data.size()));
}

Tensor Tensor::zeros(std::vector<int> shape) {
    const int n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    const int n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

int Tensor::numel() const { return static_cast<int>(data.size()); }

void Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

// ---------------------------------------------------------------------------
// Graph plumbing
// ---------------------------------------------------------------------------

namespace {

NodePtr make_leaf(Tensor t, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(t.shape);
    n->value = std::move(t.data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return n;
}

NodePtr make_op(std::vector<int> shape, std::vector<double> value, std::vector<NodePtr> parents,
                std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

void check_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
    if (a->shape != b->shape)
        throw Error(msg(op, ": shape mismatch ", shape_str(a->shape), " vs ", shape_str(b->shape)));
}

} // namespace

NodePtr constant(Tensor t) { return make_leaf(std::move(t), false); }
NodePtr variable(Tensor t) { return make_leaf(std::move(t), true); }

void backward(const NodePtr& output) {
    if (!output) throw Error("backward: null output");
    if (output->numel() != 1) throw Error(msg("backward: output must be scalar, got shape ", shape_str(output->shape)));
    if (!output->requires_grad) return;

    // Iterative post-order DFS over parents; list order is topological.
    std::vector<NodePtr> order;
    std::unordered_set<const Node*> seen;
    struct Frame {
        NodePtr node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({output, 0});
    seen.insert(output.get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            NodePtr p = top.node->parents[top.next_parent++];
            if (p->requires_grad && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.push_back({std::move(p), 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }

    for (const auto& n : order) n->ensure_grad();
    output->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (n.backward_fn) n.backward_fn(n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] + b->value[i];
    return make_op(a->shape, std::move(v), {a, b}, [](Node& n) {
        for (int side = 0; side < 2; ++side) {
            Node& p = *n.parents[side];
            if (!p.requires_grad) continue;
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] - b->value[i];
    return make_op(a->shape, std::move(v), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * b->value[i];
    return make_op(a->shape, std::move(v), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
    });
}

NodePtr scale(const NodePtr& a, double k) {
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * k;
    return make_op(a->shape, std::move(v), {a}, [k](Node& n) {
        Node& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * k;
    });
}

NodePtr add_scalar(const NodePtr& a, double k) {
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] + k;
    return make_op(a->shape, std::move(v), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

NodePtr exp_elem(const NodePtr& a) {
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a->value[i]);
    return make_op(a->shape, std::move(v), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * n.value[i];
    });
}

NodePtr leaky_clamp(const NodePtr& a, double lo, double hi, double slope) {
    if (!(lo < hi)) throw Error("leaky_clamp: lo must be below hi");
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = a->value[i];
        v[i] = x > hi ? hi + slope * (x - hi) : (x < lo ? lo + slope * (x - lo) : x);
    }
    return make_op(a->shape, std::move(v), {a}, [lo, hi, slope](Node& n) {
        Node& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = p.value[i];
            p.grad[i] += n.grad[i] * ((x > hi || x < lo) ? slope : 1.0);
        }
    });
}

NodePtr square(const NodePtr& a) {
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * a->value[i];
    return make_op(a->shape, std::move(v), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += 2.0 * n.grad[i] * p.value[i];
    });
}

NodePtr sum_all(const NodePtr& a) {
    double s = 0.0;
    for (double v : a->value) s += v;
    return make_op({1}, {s}, {a}, [](Node& n) {
        Node& p = *n.parents[0];
        const double g = n.grad[0];
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    });
}

NodePtr mean_all(const NodePtr& a) { return scale(sum_all(a), 1.0 / a->numel()); }

NodePtr reshape(const NodePtr& a, std::vector<int> shape) {
    if (shape_numel(shape) != a->numel())
        throw Error(msg("reshape: cannot view ", shape_str(a->shape), " as ", shape_str(shape)));
    return make_op(std::move(shape), a->value, {a}, [](Node& n) {
        Node& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

NodePtr concat(const std::vector<NodePtr>& xs, int axis) {
    if (xs.empty()) throw Error("concat: empty input list");
    const auto& ref = xs[0]->shape;
    if (axis < 0 || axis >= static_cast<int>(ref.size()))
        throw Error(msg("concat: axis ", axis, " out of range for rank ", ref.size()));
    int axis_total = 0;
    for (const auto& x : xs) {
        if (static_cast<int>(x->shape.size()) != static_cast<int>(ref.size()))
            throw Error("concat: rank mismatch");
        for (std::size_t d = 0; d < ref.size(); ++d)
            if (static_cast<int>(d) != axis && x->shape[d] != ref[d])
                throw Error(msg("concat: shape mismatch ", shape_str(x->shape), " vs ", shape_str(ref)));
        axis_total += x->shape[axis];
    }
    std::vector<int> out_shape = ref;
    out_shape[axis] = axis_total;

    int outer = 1;
    for (int d = 0; d < axis; ++d) outer *= ref[d];
    int inner = 1;
    for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];

    std::vector<double> v(static_cast<std::size_t>(shape_numel(out_shape)));
    const int out_row = axis_total * inner;
    int offset = 0;
    for (const auto& x : xs) {
        const int a = x->shape[axis];
        for (int o = 0; o < outer; ++o)
            std::copy_n(x->value.data() + static_cast<std::size_t>(o) * a * inner, a * inner,
                        v.data() + static_cast<std::size_t>(o) * out_row + offset * inner);
        offset += a;
    }

    return make_op(std::move(out_shape), std::move(v), xs, [axis, outer, inner](Node& n) {
        const int out_row = n.shape[axis] * inner;
        int offset = 0;
        for (auto& px : n.parents) {
            Node& p = *px;
            const int a = p.shape[axis];
            if (p.requires_grad) {
                for (int o = 0; o < outer; ++o) {
                    const double* src = n.grad.data() + static_cast<std::size_t>(o) * out_row + offset * inner;
                    double* dst = p.grad.data() + static_cast<std::size_t>(o) * a * inner;
                    for (int i = 0; i < a * inner; ++i) dst[i] += src[i];
                }
            }
            offset += a;
        }
    });
}

NodePtr tile_rows(const NodePtr& a, int times) {
    if (times < 1) throw Error("tile_rows: times must be >= 1");
    if (a->shape.empty()) throw Error("tile_rows: scalar input");
    std::vector<int> out_shape = a->shape;
    out_shape[0] *= times;
    std::vector<double> v;
    v.reserve(a->value.size() * times);
    for (int t = 0; t < times; ++t) v.insert(v.end(), a->value.begin(), a->value.end());
    return make_op(std::move(out_shape), std::move(v), {a}, [times](Node& n) {
        Node& p = *n.parents[0];
        const std::size_t block = p.grad.size();
        for (int t = 0; t < times; ++t) {
            const double* src = n.grad.data() + block * t;
            for (std::size_t i = 0; i < block; ++i) p.grad[i] += src[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

NodePtr dense(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    if (x->shape.size() != 2) throw Error(msg("dense: expected [B,F] input, got ", shape_str(x->shape)));
    if (w->shape.size() != 2) throw Error("dense: weight must be rank 2");
    const int B = x->shape[0], fin = x->shape[1];
    const int fout = w->shape[1];
    if (w->shape[0] != fin)
        throw Error(msg("dense: input features ", fin, " do not match weight rows ", w->shape[0]));
    if (b->shape != std::vector<int>{fout}) throw Error("dense: bias shape mismatch");

    std::vector<double> v(static_cast<std::size_t>(B) * fout);
    for (int r = 0; r < B; ++r) {
        double* y = v.data() + static_cast<std::size_t>(r) * fout;
        for (int o = 0; o < fout; ++o) y[o] = b->value[o];
        const double* xr = x->value.data() + static_cast<std::size_t>(r) * fin;
        for (int i = 0; i < fin; ++i) {
            const double xv = xr[i];
            const double* wr = w->value.data() + static_cast<std::size_t>(i) * fout;
            for (int o = 0; o < fout; ++o) y[o] += xv * wr[o];
        }
    }

    return make_op({B, fout}, std::move(v), {x, w, b}, [B, fin, fout](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        Node& pb = *n.parents[2];
        for (int r = 0; r < B; ++r) {
            const double* gy = n.grad.data() + static_cast<std::size_t>(r) * fout;
            const double* xr = px.value.data() + static_cast<std::size_t>(r) * fin;
            if (px.requires_grad) {
                double* gx = px.grad.data() + static_cast<std::size_t>(r) * fin;
                for (int i = 0; i < fin; ++i) {
                    const double* wr = pw.value.data() + static_cast<std::size_t>(i) * fout;
                    double acc = 0.0;
                    for (int o = 0; o < fout; ++o) acc += gy[o] * wr[o];
                    gx[i] += acc;
                }
            }
            if (pw.requires_grad) {
                for (int i = 0; i < fin; ++i) {
                    const double xv = xr[i];
                    double* gw = pw.grad.data() + static_cast<std::size_t>(i) * fout;
                    for (int o = 0; o < fout; ++o) gw[o] += xv * gy[o];
                }
            }
            if (pb.requires_grad)
                for (int o = 0; o < fout; ++o) pb.grad[o] += gy[o];
        }
    });
}

NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int padding) {
    if (x->shape.size() != 3) throw Error(msg("conv1d: expected [B,C,L] input, got ", shape_str(x->shape)));
    if (w->shape.size() != 3) throw Error("conv1d: weight must be rank 3 [Co,Ci,K]");
    const int B = x->shape[0], ci = x->shape[1], L = x->shape[2];
    const int co = w->shape[0], k = w->shape[2];
    if (w->shape[1] != ci)
        throw Error(msg("conv1d: input channels ", ci, " do not match weight channels ", w->shape[1]));
    if (b->shape != std::vector<int>{co}) throw Error("conv1d: bias shape mismatch");
    if (stride < 1) throw Error("conv1d: stride must be >= 1");
    if (padding < 0) padding = k / 2;
    const int lp = L + 2 * padding;
    const int lo = (lp - k) / stride + 1;
    if (lp < k) throw Error(msg("conv1d: kernel ", k, " larger than padded length ", lp));

    // Padded copy keeps the kernels branch-free.
    std::vector<double> xp(static_cast<std::size_t>(B) * ci * lp, 0.0);
    for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < ci; ++c)
            std::copy_n(x->value.data() + (static_cast<std::size_t>(bb) * ci + c) * L, L,
                        xp.data() + (static_cast<std::size_t>(bb) * ci + c) * lp + padding);

    std::vector<double> v(static_cast<std::size_t>(B) * co * lo);
    for (int bb = 0; bb < B; ++bb) {
        for (int o = 0; o < co; ++o) {
            double* y = v.data() + (static_cast<std::size_t>(bb) * co + o) * lo;
            const double bias = b->value[o];
            for (int j = 0; j < lo; ++j) y[j] = bias;
            for (int c = 0; c < ci; ++c) {
                const double* xr = xp.data() + (static_cast<std::size_t>(bb) * ci + c) * lp;
                const double* wr = w->value.data() + (static_cast<std::size_t>(o) * ci + c) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const double wv = wr[kk];
                    for (int j = 0; j < lo; ++j) y[j] += wv * xr[j * stride + kk];
                }
            }
        }
    }

    auto xp_shared = std::make_shared<std::vector<double>>(std::move(xp));
    return make_op({B, co, lo}, std::move(v), {x, w, b},
                   [B, ci, co, L, k, lo, lp, stride, padding, xp_shared](Node& n) {
                       Node& px = *n.parents[0];
                       Node& pw = *n.parents[1];
                       Node& pb = *n.parents[2];
                       std::vector<double> gxp;
                       if (px.requires_grad) gxp.assign(static_cast<std::size_t>(B) * ci * lp, 0.0);
                       for (int bb = 0; bb < B; ++bb) {
                           for (int o = 0; o < co; ++o) {
                               const double* gy = n.grad.data() + (static_cast<std::size_t>(bb) * co + o) * lo;
                               if (pb.requires_grad) {
                                   double acc = 0.0;
                                   for (int j = 0; j < lo; ++j) acc += gy[j];
                                   pb.grad[o] += acc;
                               }
                               for (int c = 0; c < ci; ++c) {
                                   const double* xr = xp_shared->data() + (static_cast<std::size_t>(bb) * ci + c) * lp;
                                   const double* wr = pw.value.data() + (static_cast<std::size_t>(o) * ci + c) * k;
                                   double* gw = pw.requires_grad
                                                    ? pw.grad.data() + (static_cast<std::size_t>(o) * ci + c) * k
                                                    : nullptr;
                                   double* gx = px.requires_grad
                                                    ? gxp.data() + (static_cast<std::size_t>(bb) * ci + c) * lp
                                                    : nullptr;
                                   for (int kk = 0; kk < k; ++kk) {
                                       double accw = 0.0;
                                       const double wv = wr[kk];
                                       for (int j = 0; j < lo; ++j) {
                                           const double g = gy[j];
                                           accw += g * xr[j * stride + kk];
                                           if (gx) gx[j * stride + kk] += wv * g;
                                       }
                                       if (gw) gw[kk] += accw;
                                   }
                               }
                           }
                       }
                       if (px.requires_grad) {
                           for (int bb = 0; bb < B; ++bb)
                               for (int c = 0; c < ci; ++c) {
                                   const double* src = gxp.data() + (static_cast<std::size_t>(bb) * ci + c) * lp + padding;
                                   double* dst = px.grad.data() + (static_cast<std::size_t>(bb) * ci + c) * L;
                                   for (int j = 0; j < L; ++j) dst[j] += src[j];
                               }
                       }
                   });
}

NodePtr avgpool1d(const NodePtr& x, int window, int stride) {
    if (x->shape.size() != 3) throw Error(msg("avgpool1d: expected [B,C,L] input, got ", shape_str(x->shape)));
    if (window < 1 || stride < 1) throw Error("avgpool1d: window and stride must be >= 1");
    const int B = x->shape[0], C = x->shape[1], L = x->shape[2];
    if (L < window) throw Error(msg("avgpool1d: window ", window, " larger than length ", L));
    const int lo = (L - window) / stride + 1;
    std::vector<double> v(static_cast<std::size_t>(B) * C * lo);
    const double inv = 1.0 / window;
    for (int bc = 0; bc < B * C; ++bc) {
        const double* xr = x->value.data() + static_cast<std::size_t>(bc) * L;
        double* y = v.data() + static_cast<std::size_t>(bc) * lo;
        for (int j = 0; j < lo; ++j) {
            double acc = 0.0;
            for (int t = 0; t < window; ++t) acc += xr[j * stride + t];
            y[j] = acc * inv;
        }
    }
    return make_op({B, C, lo}, std::move(v), {x}, [B, C, L, lo, window, stride, inv](Node& n) {
        Node& p = *n.parents[0];
        for (int bc = 0; bc < B * C; ++bc) {
            const double* gy = n.grad.data() + static_cast<std::size_t>(bc) * lo;
            double* gx = p.grad.data() + static_cast<std::size_t>(bc) * L;
            for (int j = 0; j < lo; ++j) {
                const double g = gy[j] * inv;
                for (int t = 0; t < window; ++t) gx[j * stride + t] += g;
            }
        }
    });
}

NodePtr leaky_relu(const NodePtr& x, double slope) {
    std::vector<double> v(x->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xv = x->value[i];
        v[i] = xv > 0.0 ? xv : slope * xv;
    }
    return make_op(x->shape, std::move(v), {x}, [slope](Node& n) {
        Node& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p.grad[i] += n.grad[i] * (p.value[i] > 0.0 ? 1.0 : slope);
    });
}

NodePtr flatten(const NodePtr& x) {
    if (x->shape.size() < 2) throw Error(msg("flatten: expected rank >= 2, got ", shape_str(x->shape)));
    int rest = 1;
    for (std::size_t d = 1; d < x->shape.size(); ++d) rest *= x->shape[d];
    return reshape(x, {x->shape[0], rest});
}

NodePtr interp_upsample1d(const NodePtr& x, int factor) {
    if (x->shape.size() != 3) throw Error(msg("interp_upsample1d: expected [B,C,L] input, got ", shape_str(x->shape)));
    if (factor < 1) throw Error("interp_upsample1d: factor must be >= 1");
    const int B = x->shape[0], C = x->shape[1], L = x->shape[2];
    const int lo = L * factor;
    std::vector<double> offs(factor);
    for (int r = 0; r < factor; ++r) offs[r] = (r + 0.5) / factor - 0.5;

    auto slope_at = [L](const double* p, int j) {
        if (L == 1) return 0.0;
        if (j == 0) return p[1] - p[0];
        if (j == L - 1) return p[L - 1] - p[L - 2];
        return 0.5 * (p[j + 1] - p[j - 1]);
    };

    std::vector<double> v(static_cast<std::size_t>(B) * C * lo);
    for (int bc = 0; bc < B * C; ++bc) {
        const double* p = x->value.data() + static_cast<std::size_t>(bc) * L;
        double* y = v.data() + static_cast<std::size_t>(bc) * lo;
        for (int j = 0; j < L; ++j) {
            const double s = slope_at(p, j);
            for (int r = 0; r < factor; ++r) y[j * factor + r] = p[j] + s * offs[r];
        }
    }

    return make_op({B, C, lo}, std::move(v), {x}, [B, C, L, lo, factor, offs](Node& n) {
        Node& p = *n.parents[0];
        for (int bc = 0; bc < B * C; ++bc) {
            const double* gy = n.grad.data() + static_cast<std::size_t>(bc) * lo;
            double* gx = p.grad.data() + static_cast<std::size_t>(bc) * L;
            for (int j = 0; j < L; ++j) {
                double gsum = 0.0, gslope = 0.0;
                for (int r = 0; r < factor; ++r) {
                    gsum += gy[j * factor + r];
                    gslope += gy[j * factor + r] * offs[r];
                }
                gx[j] += gsum;
                if (L == 1) continue;
                if (j == 0) {
                    gx[1] += gslope;
                    gx[0] -= gslope;
                } else if (j == L - 1) {
                    gx[L - 1] += gslope;
                    gx[L - 2] -= gslope;
                } else {
                    gx[j + 1] += 0.5 * gslope;
                    gx[j - 1] -= 0.5 * gslope;
                }
            }
        }
    });
}

NodePtr interp_resize1d(const NodePtr& x, int out_len) {
    if (x->shape.size() != 3) throw Error(msg("interp_resize1d: expected [B,C,L] input, got ", shape_str(x->shape)));
    if (out_len < 1) throw Error("interp_resize1d: output length must be >= 1");
    const int B = x->shape[0], C = x->shape[1], L = x->shape[2];

    // Precompute sample positions (endpoint-aligned linear map).
    std::vector<int> idx0(out_len);
    std::vector<double> w1(out_len);
    for (int i = 0; i < out_len; ++i) {
        double u = (out_len == 1) ? 0.5 * (L - 1)
                                  : static_cast<double>(i) * (L - 1) / (out_len - 1);
        int i0 = static_cast<int>(std::floor(u));
        if (i0 > L - 2) i0 = std::max(0, L - 2);
        double w = (L == 1) ? 0.0 : u - i0;
        idx0[i] = i0;
        w1[i] = w;
    }

    std::vector<double> v(static_cast<std::size_t>(B) * C * out_len);
    for (int bc = 0; bc < B * C; ++bc) {
        const double* p = x->value.data() + static_cast<std::size_t>(bc) * L;
        double* y = v.data() + static_cast<std::size_t>(bc) * out_len;
        for (int i = 0; i < out_len; ++i) {
            const int i0 = idx0[i];
            const double w = w1[i];
            y[i] = (L == 1) ? p[0] : p[i0] * (1.0 - w) + p[i0 + 1] * w;
        }
    }

    return make_op({B, C, out_len}, std::move(v), {x}, [B, C, L, out_len, idx0, w1](Node& n) {
        Node& p = *n.parents[0];
        for (int bc = 0; bc < B * C; ++bc) {
            const double* gy = n.grad.data() + static_cast<std::size_t>(bc) * out_len;
            double* gx = p.grad.data() + static_cast<std::size_t>(bc) * L;
            for (int i = 0; i < out_len; ++i) {
                if (L == 1) {
                    gx[0] += gy[i];
                } else {
                    gx[idx0[i]] += gy[i] * (1.0 - w1[i]);
                    gx[idx0[i] + 1] += gy[i] * w1[i];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

namespace {

struct BnAxes {
    int channels = 0;
    int reduce = 0; // samples per channel
};

BnAxes bn_axes(const std::vector<int>& shape) {
    if (shape.size() == 2) return {shape[1], shape[0]};
    if (shape.size() == 3) return {shape[1], shape[0] * shape[2]};
    throw Error(msg("batchnorm1d: expected [B,F] or [B,C,L] input, got ", shape_str(shape)));
}

// Channel-major traversal helper: calls fn(channel, flat_index).
template <typename F>
void for_each_bn(const std::vector<int>& shape, F&& fn) {
    if (shape.size() == 2) {
        const int B = shape[0], C = shape[1];
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) fn(c, static_cast<std::size_t>(b) * C + c);
    } else {
        const int B = shape[0], C = shape[1], L = shape[2];
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) fn(c, base + l);
            }
    }
}

NodePtr batchnorm_core(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                       const std::vector<double>& mean, const std::vector<double>& var,
                       double eps, bool stats_from_batch) {
    const BnAxes ax = bn_axes(x->shape);
    if (gamma->numel() != ax.channels || beta->numel() != ax.channels)
        throw Error(msg("batchnorm1d: affine parameters sized ", gamma->numel(), " for ", ax.channels, " channels"));

    std::vector<double> inv_std(ax.channels);
    for (int c = 0; c < ax.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

    auto xhat = std::make_shared<std::vector<double>>(x->value.size());
    std::vector<double> v(x->value.size());
    for_each_bn(x->shape, [&](int c, std::size_t i) {
        const double h = (x->value[i] - mean[c]) * inv_std[c];
        (*xhat)[i] = h;
        v[i] = gamma->value[c] * h + beta->value[c];
    });

    auto inv_shared = std::make_shared<std::vector<double>>(std::move(inv_std));
    const int C = ax.channels;
    const int N = ax.reduce;
    return make_op(x->shape, std::move(v), {x, gamma, beta},
                   [xhat, inv_shared, C, N, stats_from_batch](Node& n) {
                       Node& px = *n.parents[0];
                       Node& pg = *n.parents[1];
                       Node& pb = *n.parents[2];
                       std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
                       for_each_bn(n.shape, [&](int c, std::size_t i) {
                           sum_dy[c] += n.grad[i];
                           sum_dy_xhat[c] += n.grad[i] * (*xhat)[i];
                       });
                       if (pg.requires_grad)
                           for (int c = 0; c < C; ++c) pg.grad[c] += sum_dy_xhat[c];
                       if (pb.requires_grad)
                           for (int c = 0; c < C; ++c) pb.grad[c] += sum_dy[c];
                       if (px.requires_grad) {
                           if (stats_from_batch) {
                               for_each_bn(n.shape, [&](int c, std::size_t i) {
                                   const double term = n.grad[i] - sum_dy[c] / N - (*xhat)[i] * sum_dy_xhat[c] / N;
                                   px.grad[i] += pg.value[c] * (*inv_shared)[c] * term;
                               });
                           } else {
                               for_each_bn(n.shape, [&](int c, std::size_t i) {
                                   px.grad[i] += pg.value[c] * (*inv_shared)[c] * n.grad[i];
                               });
                           }
                       }
                   });
}

} // namespace

NodePtr batchnorm1d(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                    const NodePtr& run_mean, const NodePtr& run_var,
                    bool training, double momentum, double eps) {
    const BnAxes ax = bn_axes(x->shape);
    if (run_mean->numel() != ax.channels || run_var->numel() != ax.channels)
        throw Error("batchnorm1d: running buffer size mismatch");

    if (!training)
        return batchnorm_core(x, gamma, beta, run_mean->value, run_var->value, eps, false);

    std::vector<double> mean(ax.channels, 0.0), var(ax.channels, 0.0);
    for_each_bn(x->shape, [&](int c, std::size_t i) { mean[c] += x->value[i]; });
    for (int c = 0; c < ax.channels; ++c) mean[c] /= ax.reduce;
    for_each_bn(x->shape, [&](int c, std::size_t i) {
        const double d = x->value[i] - mean[c];
        var[c] += d * d;
    });
    for (int c = 0; c < ax.channels; ++c) var[c] /= ax.reduce;

    // Running buffers track unbiased variance.
    const double unbias = ax.reduce > 1 ? static_cast<double>(ax.reduce) / (ax.reduce - 1) : 1.0;
    for (int c = 0; c < ax.channels; ++c) {
        run_mean->value[c] = (1.0 - momentum) * run_mean->value[c] + momentum * mean[c];
        run_var->value[c] = (1.0 - momentum) * run_var->value[c] + momentum * var[c] * unbias;
    }

    return batchnorm_core(x, gamma, beta, mean, var, eps, true);
}

NodePtr batchnorm1d_stats(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                          const std::vector<double>& mean, const std::vector<double>& var,
                          double eps) {
    return batchnorm_core(x, gamma, beta, mean, var, eps, false);
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

NodePtr ParamStore::add(const std::string& name, Tensor init, bool trainable) {
    if (has(name)) throw Error(msg("parameter '", name, "' already exists"));
    auto node = make_leaf(std::move(init), trainable);
    entries.push_back({name, node, trainable});
    return node;
}

NodePtr ParamStore::at(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e.node;
    throw Error(msg("parameter '", name, "' not found"));
}

bool ParamStore::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.node->value.size();
    return n;
}

std::size_t ParamStore::trainable_size() const {
    std::size_t n = 0;
    for (const auto& e : entries)
        if (e.trainable) n += e.node->value.size();
    return n;
}

std::vector<double> ParamStore::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_size());
    for (const auto& e : entries) flat.insert(flat.end(), e.node->value.begin(), e.node->value.end());
    return flat;
}

void ParamStore::load_flat(const std::vector<double>& flat) {
    if (flat.size() != total_size())
        throw Error(msg("load_flat: expected ", total_size(), " values, got ", flat.size()));
    std::size_t pos = 0;
    for (auto& e : entries) {
        std::copy_n(flat.data() + pos, e.node->value.size(), e.node->value.data());
        pos += e.node->value.size();
    }
}

void ParamStore::zero_grad() {
    for (auto& e : entries) {
        if (!e.trainable) continue;
        e.node->ensure_grad();
        std::fill(e.node->grad.begin(), e.node->grad.end(), 0.0);
    }
}

// ---------------------------------------------------------------------------
// Adam and learning-rate schedule
// ---------------------------------------------------------------------------

void adam_step(ParamStore& params, AdamState& state, double lr) {
    if (!(lr > 0.0)) throw Error("adam_step: learning rate must be positive");
    const std::size_t n = params.trainable_size();
    if (state.m.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    } else if (state.m.size() != n) {
        throw Error(msg("adam_step: state sized ", state.m.size(), " for ", n, " trainable parameters"));
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    std::size_t pos = 0;
    for (auto& e : params.entries) {
        if (!e.trainable) continue;
        Node& node = *e.node;
        node.ensure_grad();
        for (std::size_t i = 0; i < node.value.size(); ++i, ++pos) {
            const double g = node.grad[i];
            if (!std::isfinite(g))
                throw Error(msg("adam_step: non-finite gradient at parameter '", e.name, "'[", i, "]"));
            state.m[pos] = state.beta1 * state.m[pos] + (1.0 - state.beta1) * g;
            state.v[pos] = state.beta2 * state.v[pos] + (1.0 - state.beta2) * g * g;
            const double mhat = state.m[pos] / bc1;
            const double vhat = state.v[pos] / bc2;
            node.value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double lr_at(const LrSchedule& schedule, int epoch) {
    if (epoch < 0) throw Error("lr_at: epoch must be >= 0");
    if (schedule.warmup_epochs > 0 && epoch < schedule.warmup_epochs) {
        const double t = static_cast<double>(epoch) / schedule.warmup_epochs;
        return schedule.warmup_start + (schedule.warmup_end - schedule.warmup_start) * t;
    }
    return schedule.warmup_end * std::pow(schedule.decay_base, epoch - schedule.warmup_epochs);
}

// ---------------------------------------------------------------------------
// LayerSpec sequences
// ---------------------------------------------------------------------------

const char* LayerSpec::kind_name(Kind k) {
    switch (k) {
        case Kind::Dense: return "dense";
        case Kind::Conv1d: return "conv1d";
        case Kind::AvgPool1d: return "avgpool1d";
        case Kind::InterpUpsample1d: return "interp-upsample1d";
        case Kind::BatchNorm1d: return "batchnorm1d";
        case Kind::LeakyRelu: return "leakyrelu";
        case Kind::Concat: return "concat";
        case Kind::Flatten: return "flatten";
    }
    return "?";
}

void LayerSpec::validate() const {
    switch (kind) {
        case Kind::Dense:
            if (features_in < 1 || features_out < 1) throw Error("dense: feature counts must be positive");
            break;
        case Kind::Conv1d:
            if (in_channels < 1 || out_channels < 1) throw Error("conv1d: channel counts must be positive");
            if (kernel_size < 1 || kernel_size % 2 == 0)
                throw Error(msg("conv1d: kernel size must be odd, got ", kernel_size));
            if (stride < 1) throw Error("conv1d: stride must be >= 1");
            break;
        case Kind::AvgPool1d:
            if (pool_window < 1 || pool_stride < 1) throw Error("avgpool1d: window/stride must be >= 1");
            break;
        case Kind::InterpUpsample1d:
            if (factor < 1) throw Error("interp-upsample1d: factor must be >= 1");
            break;
        case Kind::BatchNorm1d:
            if (bn_features < 1) throw Error("batchnorm1d: feature count must be positive");
            if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw Error("batchnorm1d: momentum must be in (0,1)");
            break;
        case Kind::LeakyRelu:
        case Kind::Concat:
        case Kind::Flatten:
            break;
    }
}

namespace {
std::string layer_prefix(const std::string& prefix, std::size_t i) {
    return prefix + "." + std::to_string(i);
}

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng, double slope = 0.2) {
    const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}
} // namespace

void init_sequence_params(const std::vector<LayerSpec>& specs, const std::string& prefix,
                          ParamStore& params, Rng& rng) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        s.validate();
        const std::string lp = layer_prefix(prefix, i);
        switch (s.kind) {
            case LayerSpec::Kind::Dense:
                params.add(lp + ".w", kaiming_uniform({s.features_in, s.features_out}, s.features_in, rng));
                params.add(lp + ".b", Tensor::zeros({s.features_out}));
                break;
            case LayerSpec::Kind::Conv1d:
                params.add(lp + ".w", kaiming_uniform({s.out_channels, s.in_channels, s.kernel_size},
                                                      s.in_channels * s.kernel_size, rng));
                params.add(lp + ".b", Tensor::zeros({s.out_channels}));
                break;
            case LayerSpec::Kind::BatchNorm1d:
                params.add(lp + ".gamma", Tensor::full({s.bn_features}, 1.0));
                params.add(lp + ".beta", Tensor::zeros({s.bn_features}));
                params.add(lp + ".run_mean", Tensor::zeros({s.bn_features}), /*trainable=*/false);
                params.add(lp + ".run_var", Tensor::full({s.bn_features}, 1.0), /*trainable=*/false);
                break;
            default:
                break;
        }
    }
}

std::size_t sequence_param_count(const std::vector<LayerSpec>& specs) {
    std::size_t n = 0;
    for (const auto& s : specs) {
        switch (s.kind) {
            case LayerSpec::Kind::Dense:
                n += static_cast<std::size_t>(s.features_in) * s.features_out + s.features_out;
                break;
            case LayerSpec::Kind::Conv1d:
                n += static_cast<std::size_t>(s.out_channels) * s.in_channels * s.kernel_size + s.out_channels;
                break;
            case LayerSpec::Kind::BatchNorm1d:
                n += 4u * s.bn_features;
                break;
            default:
                break;
        }
    }
    return n;
}

NodePtr forward(const std::vector<LayerSpec>& specs, const NodePtr& input, ParamStore& params,
                const std::string& prefix, bool training, const NodePtr& side) {
    NodePtr x = input;
    bool side_used = false;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        const std::string lp = layer_prefix(prefix, i);
        try {
            switch (s.kind) {
                case LayerSpec::Kind::Dense:
                    x = dense(x, params.at(lp + ".w"), params.at(lp + ".b"));
                    break;
                case LayerSpec::Kind::Conv1d:
                    x = conv1d(x, params.at(lp + ".w"), params.at(lp + ".b"), s.stride, s.padding);
                    break;
                case LayerSpec::Kind::AvgPool1d:
                    x = avgpool1d(x, s.pool_window, s.pool_stride);
                    break;
                case LayerSpec::Kind::InterpUpsample1d:
                    x = interp_upsample1d(x, s.factor);
                    break;
                case LayerSpec::Kind::BatchNorm1d:
                    x = batchnorm1d(x, params.at(lp + ".gamma"), params.at(lp + ".beta"),
                                    params.at(lp + ".run_mean"), params.at(lp + ".run_var"),
                                    training, s.bn_momentum, s.bn_eps);
                    break;
                case LayerSpec::Kind::LeakyRelu:
                    x = leaky_relu(x, s.slope);
                    break;
                case LayerSpec::Kind::Concat: {
                    if (!side) throw Error("concat layer requires a side input");
                    if (side_used) throw Error("concat layer: side input already consumed");
                    x = concat({x, side}, 1);
                    side_used = true;
                    break;
                }
                case LayerSpec::Kind::Flatten:
                    x = flatten(x);
                    break;
            }
        } catch (const Error& e) {
            throw Error(msg("layer ", i, " (", LayerSpec::kind_name(s.kind), "): ", e.what()));
        }
    }
    return x;
}

} // namespace uadbo::diff
