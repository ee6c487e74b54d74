#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uaflow/types.hpp"

namespace uaflow::model {

enum class Activation { SiLU, Tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct ModelConfig {
    int input_dim = 2;
    std::vector<int> hidden = {64, 64, 64};
    int num_classes = 0;        // 0 = unconditional
    int time_features = 8;      // sinusoidal features, must be even
    int cond_embedding_dim = 8; // ignored for unconditional models
    Activation activation = Activation::SiLU;
    std::uint64_t seed = 0;
};

struct ModelOutput {
    Vector mean;
    Vector var;
};

// Position of one dense block inside the flat parameter vector.
struct DenseSlot {
    Eigen::Index weight_offset;
    Eigen::Index bias_offset;
    int rows;
    int cols;
};

// Activations recorded by a batched forward pass; columns are samples.
struct Tape {
    std::vector<Matrix> pre;  // pre-activations of each hidden layer
    std::vector<Matrix> post; // post[0] is the trunk input, post[l+1] = act(pre[l])
    Matrix mean;
    Matrix log_sigma; // unclamped head output
    Matrix var;
    std::vector<int> cond_rows; // embedding column used by each sample, -1 if none
};

inline constexpr double kLogSigmaMin = -10.0;
inline constexpr double kLogSigmaMax = 5.0;

// MLP velocity field with a mean head and a log-standard-deviation head.
//
// Trunk input is x, sinusoidal time features, and (for conditional models) a
// learned class embedding whose last column is the null condition. Both heads
// start at zero so a fresh model predicts mean 0 and variance 1.
//
// A model is immutable during inference; const members may be called
// concurrently.
class VelocityModel {
public:
    explicit VelocityModel(ModelConfig config);

    const ModelConfig& config() const noexcept { return config_; }
    int dim() const noexcept { return config_.input_dim; }
    bool conditional() const noexcept { return config_.num_classes > 0; }
    int num_classes() const noexcept { return config_.num_classes; }

    Vector& parameters() noexcept { return params_; }
    const Vector& parameters() const noexcept { return params_; }
    Eigen::Index parameter_count() const noexcept { return params_.size(); }

    const std::vector<DenseSlot>& trunk_slots() const noexcept { return trunk_; }
    const DenseSlot& mean_head_slot() const noexcept { return mean_head_; }
    const DenseSlot& log_sigma_head_slot() const noexcept { return log_sigma_head_; }
    Eigen::Index embedding_offset() const noexcept { return embedding_offset_; }

    ModelOutput forward(const Vector& x, double t, Condition cond) const;

    // J(x) v for the mean head, by tangent propagation.
    Vector jvp_mean(const Vector& x, double t, Condition cond, const Vector& v) const;

    // Batched forward; x is dim x B, t has B entries, conds has B entries.
    Tape forward_tape(const Matrix& x, const Vector& t, std::span<const Condition> conds) const;

    // Gradient of a scalar loss with respect to all parameters given the
    // adjoints of the mean and variance outputs. Flat layout matches
    // parameters().
    Vector backward(const Tape& tape, const Matrix& d_mean, const Matrix& d_var) const;

    // Gradient of the same scalar loss with respect to the x inputs.
    Matrix input_gradient(const Tape& tape, const Matrix& d_mean, const Matrix& d_var) const;

    // Batched JVP: column j of the result is J(x_j) v_j.
    Matrix jvp_mean_batch(const Matrix& x, const Vector& t, std::span<const Condition> conds,
                          const Matrix& v) const;

    // Dense Jacobian of the mean head, assembled row by row from reverse passes.
    Matrix jacobian_mean(const Vector& x, double t, Condition cond) const;

    Vector time_embedding(double t) const;

private:
    int embedding_column(Condition cond) const;
    void check_inputs(const Matrix& x, const Vector& t, std::span<const Condition> conds) const;
    Matrix reverse(const Tape& tape, const Matrix& d_mean, const Matrix& d_var, Vector* grad) const;

    ModelConfig config_;
    Vector params_;
    std::vector<DenseSlot> trunk_;
    DenseSlot mean_head_{};
    DenseSlot log_sigma_head_{};
    Eigen::Index embedding_offset_ = 0;
    int trunk_input_dim_ = 0;
};

// Binary checkpoint: magic, version, JSON header (dims, activation, seed,
// caller metadata), then raw IEEE-754 doubles in declared parameter order.
void save_checkpoint(const VelocityModel& model, const std::string& path,
                     const std::string& metadata_json = "{}");

struct LoadedCheckpoint {
    VelocityModel model;
    std::string metadata_json;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace uaflow::model
