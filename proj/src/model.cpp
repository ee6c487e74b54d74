#include "uaflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "uaflow/error.hpp"

namespace uaflow::model {

namespace {

using Map = Eigen::Map<const Matrix>;
using VecMap = Eigen::Map<const Vector>;

Matrix activate(const Matrix& z, Activation a) {
    if (a == Activation::Tanh) return z.array().tanh().matrix();
    return (z.array() / (1.0 + (-z.array()).exp())).matrix();
}

Matrix activate_deriv(const Matrix& z, Activation a) {
    if (a == Activation::Tanh) {
        const Eigen::ArrayXXd th = z.array().tanh();
        return (1.0 - th.square()).matrix();
    }
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
    return (s * (1.0 + z.array() * (1.0 - s))).matrix();
}

constexpr char kMagic[8] = {'U', 'A', 'F', 'L', 'O', 'W', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

} // namespace

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "silu"; }

Activation activation_from_string(const std::string& s) {
    if (s == "silu") return Activation::SiLU;
    if (s == "tanh") return Activation::Tanh;
    throw InvalidArgument("unknown activation '" + s + "' (expected silu or tanh)");
}

VelocityModel::VelocityModel(ModelConfig config) : config_(std::move(config)) {
    if (config_.input_dim < 1) throw InvalidArgument("input_dim must be >= 1");
    if (config_.hidden.empty()) throw InvalidArgument("at least one hidden layer is required");
    for (int w : config_.hidden) {
        if (w < 1) throw InvalidArgument("hidden widths must be >= 1");
    }
    if (config_.time_features < 0 || config_.time_features % 2 != 0) {
        throw InvalidArgument("time_features must be a non-negative even number");
    }
    if (config_.num_classes < 0) throw InvalidArgument("num_classes must be >= 0");
    if (!conditional()) config_.cond_embedding_dim = 0;
    if (config_.cond_embedding_dim < 0) throw InvalidArgument("cond_embedding_dim must be >= 0");

    trunk_input_dim_ = config_.input_dim + config_.time_features + config_.cond_embedding_dim;

    Eigen::Index offset = 0;
    auto add = [&offset](int rows, int cols) {
        DenseSlot s{offset, offset + static_cast<Eigen::Index>(rows) * cols, rows, cols};
        offset = s.bias_offset + rows;
        return s;
    };
    int in = trunk_input_dim_;
    for (int w : config_.hidden) {
        trunk_.push_back(add(w, in));
        in = w;
    }
    mean_head_ = add(config_.input_dim, in);
    log_sigma_head_ = add(config_.input_dim, in);
    embedding_offset_ = offset;
    if (conditional()) offset += static_cast<Eigen::Index>(config_.cond_embedding_dim) * (config_.num_classes + 1);

    params_ = Vector::Zero(offset);
    Rng rng(mix_seed(config_.seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& s : trunk_) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(s.cols));
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(s.rows) * s.cols; ++i) {
            params_[s.weight_offset + i] = scale * normal(rng);
        }
    }
    for (Eigen::Index i = embedding_offset_; i < offset; ++i) params_[i] = normal(rng);
}

Vector VelocityModel::time_embedding(double t) const {
    Vector e(config_.time_features);
    for (int k = 0; k < config_.time_features / 2; ++k) {
        const double w = std::numbers::pi * std::ldexp(1.0, k);
        e[2 * k] = std::sin(w * t);
        e[2 * k + 1] = std::cos(w * t);
    }
    return e;
}

int VelocityModel::embedding_column(Condition cond) const {
    if (!conditional()) {
        if (cond.has_value()) throw InvalidArgument("class condition given to an unconditional model");
        return -1;
    }
    if (!cond.has_value()) return config_.num_classes;
    if (*cond < 0 || *cond >= config_.num_classes) {
        throw InvalidArgument("unknown class id " + std::to_string(*cond));
    }
    return *cond;
}

void VelocityModel::check_inputs(const Matrix& x, const Vector& t, std::span<const Condition> conds) const {
    if (x.rows() != dim()) {
        throw DimensionError("model input has dimension " + std::to_string(x.rows()) + ", expected " +
                             std::to_string(dim()));
    }
    if (t.size() != x.cols() || static_cast<Eigen::Index>(conds.size()) != x.cols()) {
        throw DimensionError("batch size mismatch between states, times and conditions");
    }
    if (!x.allFinite()) throw NumericError("non-finite model input");
    for (Eigen::Index j = 0; j < t.size(); ++j) {
        if (!(t[j] >= 0.0 && t[j] <= 1.0)) throw InvalidArgument("model time must lie in [0, 1]");
    }
}

Tape VelocityModel::forward_tape(const Matrix& x, const Vector& t, std::span<const Condition> conds) const {
    check_inputs(x, t, conds);
    const Eigen::Index batch = x.cols();
    const int n = dim();
    const int tf = config_.time_features;
    const int ed = config_.cond_embedding_dim;

    Tape tape;
    tape.cond_rows.resize(batch);
    Matrix input(trunk_input_dim_, batch);
    input.topRows(n) = x;
    const Map table(params_.data() + embedding_offset_, ed, config_.num_classes + 1);
    for (Eigen::Index j = 0; j < batch; ++j) {
        if (tf > 0) input.block(n, j, tf, 1) = time_embedding(t[j]);
        const int col = embedding_column(conds[j]);
        tape.cond_rows[j] = col;
        if (col >= 0 && ed > 0) input.block(n + tf, j, ed, 1) = table.col(col);
    }
    tape.post.push_back(std::move(input));

    for (const auto& s : trunk_) {
        const Map w(params_.data() + s.weight_offset, s.rows, s.cols);
        const VecMap b(params_.data() + s.bias_offset, s.rows);
        Matrix z = w * tape.post.back();
        z.colwise() += b;
        tape.post.push_back(activate(z, config_.activation));
        tape.pre.push_back(std::move(z));
    }
    const Matrix& h = tape.post.back();
    const Map wm(params_.data() + mean_head_.weight_offset, mean_head_.rows, mean_head_.cols);
    const VecMap bm(params_.data() + mean_head_.bias_offset, mean_head_.rows);
    const Map ws(params_.data() + log_sigma_head_.weight_offset, log_sigma_head_.rows, log_sigma_head_.cols);
    const VecMap bs(params_.data() + log_sigma_head_.bias_offset, log_sigma_head_.rows);
    tape.mean = wm * h;
    tape.mean.colwise() += bm;
    tape.log_sigma = ws * h;
    tape.log_sigma.colwise() += bs;
    tape.var = (2.0 * tape.log_sigma.array().max(kLogSigmaMin).min(kLogSigmaMax)).exp().matrix();
    if (!tape.mean.allFinite() || !tape.var.allFinite()) throw NumericError("non-finite model output");
    return tape;
}

ModelOutput VelocityModel::forward(const Vector& x, double t, Condition cond) const {
    const Condition c[1] = {cond};
    Tape tape = forward_tape(x, Vector::Constant(1, t), c);
    return {tape.mean.col(0), tape.var.col(0)};
}

Matrix VelocityModel::reverse(const Tape& tape, const Matrix& d_mean, const Matrix& d_var, Vector* grad) const {
    const Eigen::Index batch = tape.mean.cols();
    if (d_mean.rows() != tape.mean.rows() || d_mean.cols() != batch || d_var.rows() != tape.var.rows() ||
        d_var.cols() != batch) {
        throw DimensionError("adjoint shape does not match the recorded forward pass");
    }
    if (!d_mean.allFinite() || !d_var.allFinite()) throw NumericError("non-finite loss adjoint");

    // var = exp(2 * clamp(s)); the clamp passes gradient only inside its range.
    const Eigen::ArrayXXd inside =
        ((tape.log_sigma.array() >= kLogSigmaMin) && (tape.log_sigma.array() <= kLogSigmaMax)).cast<double>();
    const Matrix d_s = (d_var.array() * 2.0 * tape.var.array() * inside).matrix();

    const Matrix& h = tape.post.back();
    auto accumulate = [&](const DenseSlot& slot, const Matrix& dz, const Matrix& in) {
        if (!grad) return;
        Eigen::Map<Matrix> gw(grad->data() + slot.weight_offset, slot.rows, slot.cols);
        Eigen::Map<Vector> gb(grad->data() + slot.bias_offset, slot.rows);
        gw.noalias() += dz * in.transpose();
        gb += dz.rowwise().sum();
    };
    accumulate(mean_head_, d_mean, h);
    accumulate(log_sigma_head_, d_s, h);

    const Map wm(params_.data() + mean_head_.weight_offset, mean_head_.rows, mean_head_.cols);
    const Map ws(params_.data() + log_sigma_head_.weight_offset, log_sigma_head_.rows, log_sigma_head_.cols);
    Matrix d_h = wm.transpose() * d_mean + ws.transpose() * d_s;

    for (std::size_t l = trunk_.size(); l-- > 0;) {
        const auto& s = trunk_[l];
        const Matrix dz = (d_h.array() * activate_deriv(tape.pre[l], config_.activation).array()).matrix();
        accumulate(s, dz, tape.post[l]);
        const Map w(params_.data() + s.weight_offset, s.rows, s.cols);
        d_h = w.transpose() * dz;
    }

    if (grad && conditional() && config_.cond_embedding_dim > 0) {
        const int ed = config_.cond_embedding_dim;
        const int off = dim() + config_.time_features;
        Eigen::Map<Matrix> g_table(grad->data() + embedding_offset_, ed, config_.num_classes + 1);
        for (Eigen::Index j = 0; j < batch; ++j) {
            const int col = tape.cond_rows[j];
            if (col >= 0) g_table.col(col) += d_h.block(off, j, ed, 1);
        }
    }
    return d_h.topRows(dim());
}

Vector VelocityModel::backward(const Tape& tape, const Matrix& d_mean, const Matrix& d_var) const {
    Vector grad = Vector::Zero(params_.size());
    reverse(tape, d_mean, d_var, &grad);
    if (!grad.allFinite()) throw NumericError("non-finite parameter gradient");
    return grad;
}

Matrix VelocityModel::input_gradient(const Tape& tape, const Matrix& d_mean, const Matrix& d_var) const {
    return reverse(tape, d_mean, d_var, nullptr);
}

Matrix VelocityModel::jvp_mean_batch(const Matrix& x, const Vector& t, std::span<const Condition> conds,
                                     const Matrix& v) const {
    if (v.rows() != x.rows() || v.cols() != x.cols()) throw DimensionError("tangent shape does not match states");
    if (!v.allFinite()) throw NumericError("non-finite tangent");
    const Tape tape = forward_tape(x, t, conds);
    // Tangent enters through the x rows of the trunk input only.
    const auto& first = trunk_.front();
    const Map w0(params_.data() + first.weight_offset, first.rows, first.cols);
    Matrix dz = w0.leftCols(dim()) * v;
    Matrix dh = (dz.array() * activate_deriv(tape.pre[0], config_.activation).array()).matrix();
    for (std::size_t l = 1; l < trunk_.size(); ++l) {
        const auto& s = trunk_[l];
        const Map w(params_.data() + s.weight_offset, s.rows, s.cols);
        dz = w * dh;
        dh = (dz.array() * activate_deriv(tape.pre[l], config_.activation).array()).matrix();
    }
    const Map wm(params_.data() + mean_head_.weight_offset, mean_head_.rows, mean_head_.cols);
    return wm * dh;
}

Vector VelocityModel::jvp_mean(const Vector& x, double t, Condition cond, const Vector& v) const {
    const Condition c[1] = {cond};
    return jvp_mean_batch(x, Vector::Constant(1, t), c, v).col(0);
}

Matrix VelocityModel::jacobian_mean(const Vector& x, double t, Condition cond) const {
    const Condition c[1] = {cond};
    const Tape tape = forward_tape(x, Vector::Constant(1, t), c);
    const int n = dim();
    Matrix jac(n, n);
    const Matrix zero_var = Matrix::Zero(n, 1);
    for (int i = 0; i < n; ++i) {
        Matrix e = Matrix::Zero(n, 1);
        e(i, 0) = 1.0;
        jac.row(i) = input_gradient(tape, e, zero_var).col(0).transpose();
    }
    return jac;
}

void save_checkpoint(const VelocityModel& model, const std::string& path, const std::string& metadata_json) {
    const auto& c = model.config();
    nlohmann::json header;
    header["input_dim"] = c.input_dim;
    header["hidden"] = c.hidden;
    header["num_classes"] = c.num_classes;
    header["time_features"] = c.time_features;
    header["cond_embedding_dim"] = c.cond_embedding_dim;
    header["activation"] = to_string(c.activation);
    header["seed"] = c.seed;
    header["parameter_count"] = model.parameter_count();
    try {
        header["metadata"] = nlohmann::json::parse(metadata_json);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    out.write(reinterpret_cast<const char*>(model.parameters().data()),
              static_cast<std::streamsize>(model.parameter_count() * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a uaflow checkpoint: " + path);
    if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    if (len > (1u << 26)) throw IoError("corrupt checkpoint header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));

    nlohmann::json header;
    ModelConfig c;
    try {
        header = nlohmann::json::parse(text);
        c.input_dim = header.at("input_dim").get<int>();
        c.hidden = header.at("hidden").get<std::vector<int>>();
        c.num_classes = header.at("num_classes").get<int>();
        c.time_features = header.at("time_features").get<int>();
        c.cond_embedding_dim = header.at("cond_embedding_dim").get<int>();
        c.activation = activation_from_string(header.at("activation").get<std::string>());
        c.seed = header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt checkpoint header: ") + e.what());
    }
    VelocityModel model(c);
    if (header.value("parameter_count", Eigen::Index{-1}) != model.parameter_count()) {
        throw IoError("checkpoint parameter count does not match its architecture");
    }
    in.read(reinterpret_cast<char*>(model.parameters().data()),
            static_cast<std::streamsize>(model.parameter_count() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint: " + path);
    return {std::move(model), header.value("metadata", nlohmann::json::object()).dump()};
}

} // namespace uaflow::model
