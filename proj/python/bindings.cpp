#include <optional>
#include <string>
#include <variant>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "uaflow/cli/config.hpp"
#include "uaflow/cli/pipeline.hpp"
#include "uaflow/error.hpp"
#include "uaflow/eval.hpp"
#include "uaflow/guidance.hpp"
#include "uaflow/model.hpp"
#include "uaflow/train.hpp"

namespace py = pybind11;
using namespace uaflow;

namespace {

// Python sees points as rows; the library stores them as columns.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix columns(const RowMatrix& rows) { return rows.transpose(); }
RowMatrix rows(const Matrix& cols) { return cols.transpose(); }

py::tuple forward(const model::VelocityModel& m, const RowMatrix& x, double t, std::optional<int> cond) {
    if (x.cols() != m.dim()) throw DimensionError("forward: expected " + std::to_string(m.dim()) + " columns");
    RowMatrix mean(x.rows(), x.cols()), var(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto out = m.forward(x.row(i).transpose(), t, cond);
        mean.row(i) = out.mean.transpose();
        var.row(i) = out.var.transpose();
    }
    return py::make_tuple(mean, var);
}

py::tuple train_from_config(const std::string& yaml, const std::string& origin) {
    const auto cfg = cli::parse_config(yaml, origin);
    train::TrainResult result = [&] {
        py::gil_scoped_release release;
        Rng rng(cli::stream_seed(cfg.seed, cli::Stream::Data));
        const auto samples = data::draw(cfg.dataset, cfg.train_size, rng);
        return train::train(model::VelocityModel(cfg.model), samples, cfg.train);
    }();
    RowMatrix curve(result.curve.size(), 3);
    for (std::size_t i = 0; i < result.curve.size(); ++i) {
        const auto& l = result.curve[i].loss;
        curve.row(static_cast<Eigen::Index>(i)) << l.total, l.nll_term, l.correction_term;
    }
    return py::make_tuple(std::move(result.ema), curve);
}

py::tuple draw_from_config(const std::string& yaml, int n) {
    const auto cfg = cli::parse_config(yaml, "<string>");
    Rng rng(cli::stream_seed(cfg.seed, cli::Stream::Data));
    const auto s = data::draw(cfg.dataset, n > 0 ? n : cfg.train_size, rng);
    return py::make_tuple(rows(s.points), s.labels);
}

py::dict sample_many(const model::VelocityModel& m, std::size_t n, std::uint64_t seed, int steps, const std::string& method,
                     std::variant<std::monostate, int, std::string> cls, double w, std::optional<double> lambda_max,
                     std::optional<double> fixed_lambda, const std::string& cov, int probes, double top_fraction,
                     std::optional<int> threads) {
    cli::SampleOptions o;
    o.seed = seed;
    o.sampler.steps = steps;
    if (method == "heun") o.sampler.method = sample::Method::Heun;
    else if (method == "euler") o.sampler.method = sample::Method::Euler;
    else throw ConfigError("method must be 'heun' or 'euler'");
    if (const int* c = std::get_if<int>(&cls)) o.cls = *c;
    if (const auto* s = std::get_if<std::string>(&cls)) {
        if (*s != "cycle") throw ConfigError("cls must be an integer, None or 'cycle'");
        o.cycle_classes = true;
    }
    o.guidance.cg_enabled = w != 0.0;
    o.guidance.w = w;
    if (lambda_max) {
        o.guidance.cfg_enabled = true;
        o.guidance.lambda_max = *lambda_max;
    }
    o.guidance.fixed_lambda = fixed_lambda;
    if (cov == "zero") o.uq.cov = {uq::CovKind::Zero, 1};
    else if (cov == "jvp") o.uq.cov = {uq::CovKind::HutchinsonJVP, probes};
    else if (cov == "mc") o.uq.cov = {uq::CovKind::MonteCarlo, probes};
    else throw ConfigError("cov must be 'zero', 'jvp' or 'mc'");
    o.top_fraction = top_fraction;
    o.validate(m);

    std::vector<cli::SampleResult> res;
    {
        py::gil_scoped_release release;
        res = cli::generate_many(m, o, n, threads ? *threads : cli::default_threads());
    }
    RowMatrix x(n, m.dim()), var(n, m.dim());
    Vector score(n);
    std::vector<int> conds(n);
    std::vector<std::uint64_t> seeds(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        x.row(k) = res[i].x.transpose();
        var.row(k) = res[i].var_map.transpose();
        score[k] = res[i].score;
        conds[i] = res[i].cond.value_or(-1);
        seeds[i] = res[i].seed;
    }
    py::dict out;
    out["x"] = x;
    out["var"] = var;
    out["score"] = score;
    out["cond"] = conds;
    out["seed"] = seeds;
    return out;
}

} // namespace

PYBIND11_MODULE(_uaflow, m) {
    m.doc() = "Uncertainty-aware flow matching: training, sampling and evaluation on toy data";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    py::class_<model::VelocityModel>(m, "Model")
        .def_static(
            "load", [](const std::string& path) { return model::load_checkpoint(path).model; }, py::arg("path"))
        .def(
            "save", [](const model::VelocityModel& self, const std::string& path) { model::save_checkpoint(self, path); },
            py::arg("path"))
        .def_property_readonly("dim", &model::VelocityModel::dim)
        .def_property_readonly("num_classes", &model::VelocityModel::num_classes)
        .def_property_readonly("parameter_count", &model::VelocityModel::parameter_count)
        .def_property(
            "parameters", [](const model::VelocityModel& self) { return Vector(self.parameters()); },
            [](model::VelocityModel& self, const Vector& p) {
                if (p.size() != self.parameter_count()) throw DimensionError("parameter vector has the wrong length");
                self.parameters() = p;
            })
        .def("forward", &forward, py::arg("x"), py::arg("t"), py::arg("cond") = py::none(),
             "Mean and variance of the velocity at each row of x.");

    m.def("train", &train_from_config, py::arg("config"), py::arg("origin") = "<string>",
          "Train from YAML config text; returns (EMA model, loss array with columns total, nll, correction).");
    m.def("draw", &draw_from_config, py::arg("config"), py::arg("n") = 0,
          "Draw points and labels from the dataset of a YAML config.");
    m.def("sample", &sample_many, py::arg("model"), py::arg("n"), py::arg("seed") = 0, py::arg("steps") = 50,
          py::arg("method") = "heun", py::arg("cls") = py::none(), py::arg("w") = 0.0,
          py::arg("lambda_max") = py::none(), py::arg("fixed_lambda") = py::none(), py::arg("cov") = "jvp",
          py::arg("probes") = 1, py::arg("top_fraction") = 0.1, py::arg("threads") = py::none());
    m.def(
        "lambda_opt",
        [](const Vector& sy, const Vector& sn) { return guidance::lambda_opt(sy, sn); }, py::arg("sigma_y"),
        py::arg("sigma_null"));
    m.def(
        "energy_distance",
        [](const RowMatrix& real, const RowMatrix& gen) { return eval::energy_distance(columns(real), columns(gen)); },
        py::arg("real"), py::arg("gen"));
    m.def(
        "precision_recall",
        [](const RowMatrix& real, const RowMatrix& gen, int k) {
            const auto pr = eval::knn_precision_recall(columns(real), columns(gen), k);
            return py::make_tuple(pr.precision, pr.recall);
        },
        py::arg("real"), py::arg("gen"), py::arg("k") = 5);
}
