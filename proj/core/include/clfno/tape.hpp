#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "clfno/param_store.hpp"
#include "clfno/tensor.hpp"

namespace clfno {

/// Handle to a tape node.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff over a recorded operation tape.
///
/// Every primitive appends one node; backward() walks the nodes in exact
/// reverse recording order and accumulates vector-Jacobian products. A
/// parameter leaf is bound to its ParamStore entry, and backward() writes
/// the final gradients back into the store (zero for frozen entries and
/// for parameters the loss does not depend on).
///
/// Complex quantities use real tensors with a trailing dimension of 2,
/// so the whole engine differentiates in R^n and no Wirtinger calculus
/// is involved.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves -------------------------------------------------------

    /// Constant leaf (no gradient tracked).
    Var constant(Tensor value);

    /// Differentiable non-parameter leaf (inputs in gradient checks).
    Var input(Tensor value);

    /// Leaf bound to a ParamStore entry. Repeated calls for the same
    /// entry on one tape return the same node so gradients accumulate.
    Var param(ParamStore& store, const std::string& name);

    // ---- elementwise & linear algebra ----------------------------------

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    /// Broadcast multiply by a 1-element node (e.g. a learned gate).
    Var scale_var(Var a, Var s);
    /// (m,k) x (k,n) -> (m,n)
    Var matmul(Var a, Var b);
    /// x: (Cin,H,W), w: (Cout,Cin), b: (Cout) or invalid -> (Cout,H,W)
    Var channel_linear(Var x, Var w, Var b);
    Var gelu(Var x);
    /// Step function with straight-through gradient (mask binarization).
    Var binarize_ste(Var x, double threshold);

    // ---- spectral -------------------------------------------------------

    /// Real (C,H,W) -> complex (C,H,W,2); unnormalized forward transform.
    /// Rejects non-finite input.
    Var fft2(Var x);
    /// Complex (C,H,W,2) -> real (C,H,W); applies the 1/(H*W) factor and
    /// takes the real part, so ifft2_real(fft2(x)) == x.
    Var ifft2_real(Var x);
    /// Spectral weight application on retained corner blocks.
    /// x: (Cin,H,W,2), r: (Cout,Cin,2*mh,2*mw,2) -> (Cout,H,W,2), zero
    /// outside the four low-frequency blocks.
    Var spectral_mul(Var x, Var r, int modes_h, int modes_w);

    // ---- grids ----------------------------------------------------------

    /// Spatial derivative along rows (height axis), central differences in
    /// the interior, one-sided at boundaries, grid spacing 1/(H-1).
    Var grad_h(Var x);
    /// Same along columns, spacing 1/(W-1).
    Var grad_w(Var x);

    // ---- reductions ------------------------------------------------------

    Var sum(Var x);
    Var mean(Var x);

    // ---- engine ----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Writes gradients into every
    /// bound ParamStore (zeroing them first). A tape can only be walked
    /// once; record a fresh graph for the next step.
    void backward(Var loss);

    const Tensor& val(Var v) const { return nodes_[v.id].value; }
    /// Gradient of a node (zeros if the node was never touched).
    Tensor grad_of(Var v) const;

    void reset();
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // lazily sized
        bool requires_grad = false;
        std::function<void(Tape&, const Node&)> backfn;
        ParamStore* store = nullptr;
        std::string pname;
    };

    Var push(Tensor value, bool requires_grad,
             std::function<void(Tape&, const Node&)> backfn);
    Tensor& grad_buf(int id);
    bool needs(Var v) const { return nodes_[v.id].requires_grad; }

    std::vector<Node> nodes_;
    std::unordered_map<const ParamStore*, std::unordered_map<std::string, int32_t>> bound_;
    std::vector<ParamStore*> stores_;
    bool consumed_ = false;
};

} // namespace clfno
