#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

namespace ppg {

enum class Mode { train, eval };

// Carried through every model forward: train/eval switch plus the stream
// feeding dropout masks. rng may be null when nothing stochastic runs.
struct FwdCtx {
    Mode mode = Mode::eval;
    std::mt19937_64* rng = nullptr;
};

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // pull this->grad into parents

    long size() const {
        long s = 1;
        for (int d : shape) s *= d;
        return s;
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

// Value-semantic handle onto a node of the computation graph.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[i]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    long size() const { return node_->size(); }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b);
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    void clear_grad() { node_->grad.clear(); }

    std::shared_ptr<TensorNode> node() const { return node_; }

    Tensor detached_copy() const;  // same values, fresh leaf

  private:
    std::shared_ptr<TensorNode> node_;
};

// Reverse sweep from a scalar output. Throws on non-scalar outputs and on
// outputs with no graph attached.
void backward(const Tensor& out);

// ---- graph ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);       // (m,k) x (k,n)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // (...,Fin) -> (...,Fout), w (Fout,Fin)
Tensor linear_nb(const Tensor& x, const Tensor& w);                // same without bias
Tensor bmm_nn(const Tensor& a, const Tensor& b);       // (G,m,k) x (G,k,n)
Tensor bmm_nt(const Tensor& a, const Tensor& b);       // (G,m,k) x (G,n,k)

Tensor relu(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor transpose_last2(const Tensor& a);  // (...,M,N) -> (...,N,M)
Tensor concat_lastdim(const Tensor& a, const Tensor& b);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mean_lastdim(const Tensor& a);

// x (B,Cin,L), w (Cout,Cin,K), b (Cout); explicit zero padding each side.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad_left,
              int pad_right);
Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1);
// Length-preserving causal pad: left variant pads K-1 on the left.
Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b, bool left);

Tensor dropout(const Tensor& x, double rate, const FwdCtx& ctx);

Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta);

/// Running statistics owned by a batchnorm layer. Stored as grad-free leaf
/// tensors so checkpoints and clones pick them up with the parameters.
struct BnState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
};

BnState make_bn_state(int channels);

// Per-channel normalization: x (B,C,L) normalizes over batch and length,
// x (B,F) over the batch. Train mode uses batch statistics (population
// variance) and folds them into the running estimates; eval mode reads the
// running estimates and never mutates state.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnState& state,
                 const FwdCtx& ctx);

// Positional-encoding style broadcast: x (...,P,E) + v (P,E).
Tensor add_broadcast_rows(const Tensor& x, const Tensor& v);
// F (B,K,L) + w (B,L) broadcast across the K rows.
Tensor add_broadcast_over_rows(const Tensor& f, const Tensor& w);
// (B,K) x (L) -> (B,K,L) outer product per row vector.
Tensor outer_rows(const Tensor& x, const Tensor& u);

// Multi-head reshuffles: (B,P,E) <-> (B*H, P, E/H).
Tensor split_heads(const Tensor& x, int heads);
Tensor merge_heads(const Tensor& x, int heads);

// Mean of |a - b| over all elements.
Tensor l1_loss(const Tensor& a, const Tensor& b);
// Mean cross-entropy of logits (B,C) against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Scatter visible tokens into a full-length sequence, masked slots all
// receiving mask_token: vis (B,Pv,E), out (B,total,E).
Tensor assemble_tokens(const Tensor& vis, const Tensor& mask_token,
                       const std::vector<int>& visible_pos, int total);

// Per-patch pixels (B,P,ph*pw) -> image grid (B, prows*ph, pcols*pw),
// patches row-major over the patch grid.
Tensor patches_to_grid(const Tensor& pixels, int prows, int pcols, int ph, int pw);

// ---- gradient checking --------------------------------------------------

// Max over all coordinates of all leaves of |g_ad - g_fd| / max(1, |g_fd|),
// central differences with step h. fn must rebuild its graph on every call.
double gradcheck(const std::function<Tensor()>& fn, const std::vector<Tensor>& leaves,
                 double h = 1e-5);
double gradcheck(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                 double h = 1e-5);

}  // namespace ppg
