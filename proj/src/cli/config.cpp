#include "uaflow/cli/config.hpp"

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "uaflow/error.hpp"

namespace uaflow::cli {

namespace {

template <typename T>
const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a string";
}

class Checker {
public:
    explicit Checker(std::string origin) : origin_(std::move(origin)) {}

    void error(const YAML::Node& at, const std::string& key, const std::string& msg) {
        const int line = at.Mark().is_null() ? 0 : at.Mark().line + 1;
        errors_.push_back(fmt::format("{}:{}: {}: {}", origin_, line, key, msg));
    }

    template <typename T>
    T get(const YAML::Node& parent, const std::string& key, const std::string& path, T fallback,
          bool required = false) {
        const YAML::Node n = parent[key];
        if (!n) {
            if (required) error(parent, path + key, "required field missing");
            return fallback;
        }
        if (!n.IsScalar()) {
            error(n, path + key, fmt::format("expected {}", type_name<T>()));
            return fallback;
        }
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            error(n, path + key, fmt::format("expected {}, got '{}'", type_name<T>(), n.Scalar()));
            return fallback;
        }
    }

    std::vector<double> numbers(const YAML::Node& n, const std::string& key) {
        std::vector<double> out;
        if (!n.IsSequence()) {
            error(n, key, "expected a list of numbers");
            return out;
        }
        for (const auto& v : n) {
            try {
                out.push_back(v.as<double>());
            } catch (const YAML::Exception&) {
                error(v, key, "expected a list of numbers");
            }
        }
        return out;
    }

    void only_keys(const YAML::Node& map, const std::set<std::string>& allowed, const std::string& path) {
        for (const auto& kv : map) {
            const auto key = kv.first.as<std::string>();
            if (!allowed.count(key)) error(kv.first, path + key, "unknown key");
        }
    }

    // Section that must be a mapping when present.
    std::optional<YAML::Node> section(const YAML::Node& root, const std::string& key, bool required) {
        const YAML::Node n = root[key];
        if (!n) {
            if (required) error(root, key, "required section missing");
            return std::nullopt;
        }
        if (!n.IsMap()) {
            error(n, key, "expected a mapping");
            return std::nullopt;
        }
        return n;
    }

    void require(bool ok, const YAML::Node& parent, const std::string& key, const std::string& msg) {
        if (ok) return;
        const auto dot = key.rfind('.');
        const YAML::Node at = parent[dot == std::string::npos ? key : key.substr(dot + 1)];
        error(at ? at : parent, key, msg);
    }

    void finish() const {
        if (errors_.empty()) return;
        std::string msg = fmt::format("{} configuration error(s):", errors_.size());
        for (const auto& e : errors_) msg += "\n  " + e;
        throw ConfigError(msg);
    }

private:
    std::string origin_;
    std::vector<std::string> errors_;
};

data::ToyDataset parse_dataset(Checker& c, const YAML::Node& d, int& train_size) {
    const std::string p = "dataset.";
    const auto kind = c.get<std::string>(d, "kind", p, "", true);
    const bool labeled = c.get<bool>(d, "labeled", p, false);
    train_size = c.get<int>(d, "size", p, 4000);
    c.require(train_size >= 1, d, p + "size", "must be >= 1");
    std::set<std::string> common{"kind", "labeled", "size"};

    auto keys = [&](std::initializer_list<const char*> extra) {
        auto k = common;
        for (const char* e : extra) k.insert(e);
        c.only_keys(d, k, p);
    };

    data::ToyDataset out{data::ring_mixture(8, 4.0, 0.35), labeled};
    if (kind == "ring") {
        keys({"modes", "radius", "sigma"});
        const int modes = c.get<int>(d, "modes", p, 8);
        const double radius = c.get<double>(d, "radius", p, 4.0);
        const double sigma = c.get<double>(d, "sigma", p, 0.35);
        c.require(modes >= 1, d, p + "modes", "must be >= 1");
        c.require(radius >= 0, d, p + "radius", "must be >= 0");
        c.require(sigma > 0, d, p + "sigma", "must be > 0");
        if (modes >= 1 && sigma > 0) out.kind = data::ring_mixture(modes, radius, sigma);
    } else if (kind == "mixture") {
        keys({"components"});
        const YAML::Node comps = d["components"];
        data::GaussianMixture mix;
        if (!comps || !comps.IsSequence() || comps.size() == 0) {
            c.error(comps ? comps : d, p + "components", "expected a nonempty list of components");
        } else {
            std::size_t dim = 0;
            for (std::size_t i = 0; i < comps.size(); ++i) {
                const YAML::Node m = comps[i];
                const std::string cp = fmt::format("{}components[{}].", p, i);
                if (!m.IsMap()) {
                    c.error(m, cp, "expected a mapping");
                    continue;
                }
                c.only_keys(m, {"mean", "sigma", "weight", "label"}, cp);
                std::vector<double> mean;
                if (!m["mean"]) c.error(m, cp + "mean", "required field missing");
                else mean = c.numbers(m["mean"], cp + "mean");
                data::MixtureMode mode{Vector::Zero(0), c.get<double>(m, "sigma", cp, 1.0, true)};
                mode.weight = c.get<double>(m, "weight", cp, 1.0);
                mode.label = c.get<int>(m, "label", cp, static_cast<int>(i));
                c.require(mode.sigma > 0, m, cp + "sigma", "must be > 0");
                c.require(mode.weight > 0, m, cp + "weight", "must be > 0");
                c.require(mode.label >= 0, m, cp + "label", "must be >= 0");
                if (i == 0) dim = mean.size();
                if (mean.empty()) c.error(m, cp + "mean", "must have at least one coordinate");
                else if (mean.size() != dim) c.error(m["mean"], cp + "mean", "dimension differs from components[0]");
                mode.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
                mix.modes.push_back(std::move(mode));
            }
        }
        out.kind = mix;
    } else if (kind == "moons") {
        keys({"noise"});
        const double noise = c.get<double>(d, "noise", p, 0.1);
        c.require(noise > 0, d, p + "noise", "must be > 0");
        out.kind = data::TwoMoons{noise};
    } else if (kind == "checkerboard") {
        keys({"cells"});
        const int cells = c.get<int>(d, "cells", p, 4);
        c.require(cells >= 2, d, p + "cells", "must be >= 2");
        c.require(!labeled, d, p + "labeled", "checkerboard data has no labels");
        out.kind = data::Checkerboard{cells};
    } else if (!kind.empty()) {
        c.error(d["kind"], p + "kind", fmt::format("unknown dataset kind '{}' (ring|mixture|moons|checkerboard)", kind));
    }
    return out;
}

void parse_model(Checker& c, const YAML::Node& m, model::ModelConfig& cfg) {
    const std::string p = "model.";
    c.only_keys(m, {"hidden", "activation", "time_features", "embedding_dim"}, p);
    if (m["hidden"]) {
        cfg.hidden.clear();
        for (double h : c.numbers(m["hidden"], p + "hidden")) {
            if (h < 1 || h != static_cast<int>(h)) c.error(m["hidden"], p + "hidden", "widths must be positive integers");
            else cfg.hidden.push_back(static_cast<int>(h));
        }
        if (cfg.hidden.empty()) c.error(m["hidden"], p + "hidden", "needs at least one layer");
    }
    const auto act = c.get<std::string>(m, "activation", p, "silu");
    try {
        cfg.activation = model::activation_from_string(act);
    } catch (const Error&) {
        c.error(m["activation"], p + "activation", fmt::format("unknown activation '{}' (silu|tanh)", act));
    }
    cfg.time_features = c.get<int>(m, "time_features", p, cfg.time_features);
    c.require(cfg.time_features >= 0 && cfg.time_features % 2 == 0, m, p + "time_features", "must be even and >= 0");
    cfg.cond_embedding_dim = c.get<int>(m, "embedding_dim", p, cfg.cond_embedding_dim);
    c.require(cfg.cond_embedding_dim >= 1, m, p + "embedding_dim", "must be >= 1");
}

void parse_train(Checker& c, const YAML::Node& t, train::TrainConfig& cfg) {
    const std::string p = "train.";
    c.only_keys(t,
                {"steps", "batch_size", "learning_rate", "beta", "ema_decay", "correction", "label_dropout",
                 "plain_fraction", "time_eps"},
                p);
    cfg.steps = c.get<int>(t, "steps", p, cfg.steps);
    cfg.batch_size = c.get<int>(t, "batch_size", p, cfg.batch_size);
    cfg.learning_rate = c.get<double>(t, "learning_rate", p, cfg.learning_rate);
    cfg.beta = c.get<double>(t, "beta", p, cfg.beta);
    cfg.ema_decay = c.get<double>(t, "ema_decay", p, cfg.ema_decay);
    cfg.use_correction = c.get<bool>(t, "correction", p, cfg.use_correction);
    cfg.label_dropout = c.get<double>(t, "label_dropout", p, cfg.label_dropout);
    cfg.plain_fraction = c.get<double>(t, "plain_fraction", p, cfg.plain_fraction);
    cfg.time_eps = c.get<double>(t, "time_eps", p, cfg.time_eps);
    c.require(cfg.steps >= 1, t, p + "steps", "must be >= 1");
    c.require(cfg.batch_size >= 1, t, p + "batch_size", "must be >= 1");
    c.require(cfg.learning_rate > 0, t, p + "learning_rate", "must be > 0");
    c.require(cfg.beta >= 0 && cfg.beta <= 1, t, p + "beta", "must lie in [0, 1]");
    c.require(cfg.ema_decay >= 0 && cfg.ema_decay < 1, t, p + "ema_decay", "must lie in [0, 1)");
    c.require(cfg.label_dropout >= 0 && cfg.label_dropout <= 1, t, p + "label_dropout", "must lie in [0, 1]");
    c.require(cfg.plain_fraction >= 0 && cfg.plain_fraction <= 1, t, p + "plain_fraction", "must lie in [0, 1]");
    c.require(cfg.time_eps > 0 && cfg.time_eps < 0.5, t, p + "time_eps", "must lie in (0, 0.5)");
}

} // namespace

std::uint64_t stream_seed(std::uint64_t seed, Stream stream) {
    return mix_seed(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(stream)));
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(fmt::format("{}:{}: syntax error: {}", origin, e.mark.line + 1, e.msg));
    }
    Checker c(origin);
    RunConfig cfg;
    if (!root.IsMap()) {
        if (root.IsNull()) c.error(root, "dataset", "required section missing");
        else c.error(root, "<root>", "expected a mapping of sections");
        c.finish();
    }
    c.only_keys(root, {"seed", "dataset", "model", "train"}, "");
    cfg.seed = c.get<std::uint64_t>(root, "seed", "", 0);
    if (const auto d = c.section(root, "dataset", true)) cfg.dataset = parse_dataset(c, *d, cfg.train_size);
    if (const auto m = c.section(root, "model", false)) parse_model(c, *m, cfg.model);
    if (const auto t = c.section(root, "train", false)) parse_train(c, *t, cfg.train);
    c.finish();

    try {
        data::validate(cfg.dataset);
    } catch (const Error& e) {
        throw ConfigError(fmt::format("{}: dataset: {}", origin, e.what()));
    }
    cfg.model.input_dim = cfg.dataset.dim();
    cfg.model.num_classes = cfg.dataset.num_classes();
    cfg.model.seed = stream_seed(cfg.seed, Stream::Model);
    cfg.train.seed = stream_seed(cfg.seed, Stream::Train);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

nlohmann::json dataset_to_json(const data::ToyDataset& dataset) {
    nlohmann::json j;
    j["labeled"] = dataset.labeled;
    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, data::GaussianMixture>) {
                j["kind"] = "mixture";
                j["components"] = nlohmann::json::array();
                for (const auto& m : k.modes) {
                    j["components"].push_back({{"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())},
                                               {"sigma", m.sigma},
                                               {"weight", m.weight},
                                               {"label", m.label}});
                }
            } else if constexpr (std::is_same_v<K, data::TwoMoons>) {
                j["kind"] = "moons";
                j["noise"] = k.noise;
            } else {
                j["kind"] = "checkerboard";
                j["cells"] = k.cells;
            }
        },
        dataset.kind);
    return j;
}

data::ToyDataset dataset_from_json(const nlohmann::json& j) {
    try {
        const auto kind = j.at("kind").get<std::string>();
        const bool labeled = j.at("labeled").get<bool>();
        if (kind == "mixture") {
            data::GaussianMixture mix;
            for (const auto& c : j.at("components")) {
                const auto mean = c.at("mean").get<std::vector<double>>();
                mix.modes.push_back({Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                                     c.at("sigma").get<double>(), c.at("weight").get<double>(), c.at("label").get<int>()});
            }
            return data::make_dataset(mix, labeled);
        }
        if (kind == "moons") return data::make_dataset(data::TwoMoons{j.at("noise").get<double>()}, labeled);
        if (kind == "checkerboard") return data::make_dataset(data::Checkerboard{j.at("cells").get<int>()}, labeled);
        throw ConfigError("unknown dataset kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed dataset record: ") + e.what());
    }
}

nlohmann::json to_json(const RunConfig& config) {
    const auto& m = config.model;
    const auto& t = config.train;
    return {{"seed", config.seed},
            {"dataset", dataset_to_json(config.dataset)},
            {"train_size", config.train_size},
            {"model",
             {{"hidden", m.hidden},
              {"activation", model::to_string(m.activation)},
              {"time_features", m.time_features},
              {"embedding_dim", m.cond_embedding_dim}}},
            {"train",
             {{"steps", t.steps},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"beta", t.beta},
              {"ema_decay", t.ema_decay},
              {"correction", t.use_correction},
              {"label_dropout", t.label_dropout},
              {"plain_fraction", t.plain_fraction},
              {"time_eps", t.time_eps}}}};
}

RunConfig config_from_json(const nlohmann::json& j) {
    try {
        RunConfig cfg;
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.dataset = dataset_from_json(j.at("dataset"));
        cfg.train_size = j.at("train_size").get<int>();
        const auto& m = j.at("model");
        cfg.model.hidden = m.at("hidden").get<std::vector<int>>();
        cfg.model.activation = model::activation_from_string(m.at("activation").get<std::string>());
        cfg.model.time_features = m.at("time_features").get<int>();
        cfg.model.cond_embedding_dim = m.at("embedding_dim").get<int>();
        cfg.model.input_dim = cfg.dataset.dim();
        cfg.model.num_classes = cfg.dataset.num_classes();
        cfg.model.seed = stream_seed(cfg.seed, Stream::Model);
        const auto& t = j.at("train");
        cfg.train.steps = t.at("steps").get<int>();
        cfg.train.batch_size = t.at("batch_size").get<int>();
        cfg.train.learning_rate = t.at("learning_rate").get<double>();
        cfg.train.beta = t.at("beta").get<double>();
        cfg.train.ema_decay = t.at("ema_decay").get<double>();
        cfg.train.use_correction = t.at("correction").get<bool>();
        cfg.train.label_dropout = t.at("label_dropout").get<double>();
        cfg.train.plain_fraction = t.at("plain_fraction").get<double>();
        cfg.train.time_eps = t.at("time_eps").get<double>();
        cfg.train.seed = stream_seed(cfg.seed, Stream::Train);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config record: ") + e.what());
    }
}

} // namespace uaflow::cli
