#include "uadbo/config.hpp"

#include <fstream>
#include <sstream>

namespace uadbo::cli {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw Error(msg("config: key '", key, "' expects a number, got '", v, "'"));
    }
}

int to_int(const std::string& key, const std::string& v) {
    const double x = to_double(key, v);
    const int i = static_cast<int>(std::lround(x));
    if (std::fabs(x - i) > 1e-9) throw Error(msg("config: key '", key, "' expects an integer, got '", v, "'"));
    return i;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error(msg("config: key '", key, "' expects a boolean, got '", v, "'"));
}

std::array<double, geom::kCstCount> to_coeffs(const std::string& key, const std::string& v) {
    std::array<double, geom::kCstCount> out{};
    std::stringstream ss(v);
    std::string item;
    int n = 0;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        if (n >= geom::kCstCount) throw Error(msg("config: key '", key, "' expects 10 values"));
        out[n++] = to_double(key, item);
    }
    if (n != geom::kCstCount) throw Error(msg("config: key '", key, "' expects 10 values, got ", n));
    return out;
}

} // namespace

void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
    // dataset ------------------------------------------------------------
    if (key == "dataset.problem") {
        c.dataset.problem = data::problem_from_name(value);
        c.optimizer.problem = value;
    } else if (key == "dataset.airfoils") {
        c.dataset_airfoils = to_int(key, value);
    } else if (key == "dataset.conditions_per_airfoil") {
        c.dataset.conditions_per_airfoil = to_int(key, value);
    } else if (key == "dataset.mach_min") {
        c.dataset.mach_min = to_double(key, value);
    } else if (key == "dataset.mach_max") {
        c.dataset.mach_max = to_double(key, value);
    } else if (key == "dataset.daoa_min") {
        c.dataset.daoa_min = to_double(key, value);
    } else if (key == "dataset.daoa_max") {
        c.dataset.daoa_max = to_double(key, value);
    } else if (key == "dataset.cruise_mach") {
        c.dataset.cruise_mach = to_double(key, value);
    } else if (key == "dataset.cruise_cl") {
        c.dataset.cruise_cl = to_double(key, value);
    } else if (key == "dataset.noise") {
        c.dataset.oracle_config.noise_scale = to_double(key, value);
    } else if (key == "dataset.upper_min") {
        c.lhs.upper_min = to_double(key, value);
    } else if (key == "dataset.upper_max") {
        c.lhs.upper_max = to_double(key, value);
    } else if (key == "dataset.lower_min") {
        c.lhs.lower_min = to_double(key, value);
    } else if (key == "dataset.lower_max") {
        c.lhs.lower_max = to_double(key, value);
        // model ----------------------------------------------------------
    } else if (key == "model.mode") {
        c.model.mode = model::mode_from_name(value);
    } else if (key == "model.decoder") {
        if (value == "scalar")
            c.model.decoder = model::DecoderKind::Scalar;
        else if (value == "field")
            c.model.decoder = model::DecoderKind::Field;
        else
            throw Error(msg("config: unknown decoder '", value, "'"));
    } else if (key == "model.beta") {
        c.model.beta = to_double(key, value);
    } else if (key == "model.n_l") {
        c.model.n_l = to_int(key, value);
    } else if (key == "model.ensemble_n") {
        c.model.ensemble_n = to_int(key, value);
    } else if (key == "model.residual_learning") {
        c.model.residual_learning = to_bool(key, value);
        // training ---------------------------------------------------------
    } else if (key == "training.batch_size") {
        c.model.batch_size = to_int(key, value);
    } else if (key == "training.max_epochs") {
        c.model.max_epochs = to_int(key, value);
    } else if (key == "training.patience") {
        c.model.patience = to_int(key, value);
    } else if (key == "training.warmup_start") {
        c.model.lr.warmup_start = to_double(key, value);
    } else if (key == "training.warmup_end") {
        c.model.lr.warmup_end = to_double(key, value);
    } else if (key == "training.warmup_epochs") {
        c.model.lr.warmup_epochs = to_int(key, value);
    } else if (key == "training.decay_base") {
        c.model.lr.decay_base = to_double(key, value);
    } else if (key == "training.train_fraction") {
        c.train_fraction = to_double(key, value);
    } else if (key == "training.val_fraction") {
        c.val_fraction = to_double(key, value);
    } else if (key == "training.cv_runs") {
        c.cv_runs = to_int(key, value);
        // uq ---------------------------------------------------------------
    } else if (key == "uq.n_s") {
        c.n_s = to_int(key, value);
        c.optimizer.n_s = c.n_s;
    } else if (key == "uq.alpha") {
        c.alpha = to_double(key, value);
        c.optimizer.alpha = c.alpha;
    } else if (key == "uq.calibration_target") {
        if (value != "cd" && value != "cdbar")
            throw Error(msg("config: unknown calibration target '", value, "'"));
        c.calibration_target = value;
        // problem ------------------------------------------------------------
    } else if (key == "problem.baseline_upper") {
        c.baseline.upper = to_coeffs(key, value);
    } else if (key == "problem.baseline_lower") {
        c.baseline.lower = to_coeffs(key, value);
    } else if (key == "problem.baseline_tc") {
        c.baseline.tc_max = to_double(key, value);
        // optimizer ----------------------------------------------------------
    } else if (key == "optimizer.iterations") {
        c.optimizer.iterations = to_int(key, value);
    } else if (key == "optimizer.population") {
        c.optimizer.population = to_int(key, value);
    } else if (key == "optimizer.init_population") {
        c.optimizer.init_population = to_int(key, value);
    } else if (key == "optimizer.f") {
        c.optimizer.de_f = to_double(key, value);
    } else if (key == "optimizer.cr") {
        c.optimizer.de_cr = to_double(key, value);
    } else if (key == "optimizer.bounds_delta") {
        c.optimizer.bounds_delta = to_double(key, value);
    } else if (key == "optimizer.bump_amplitude") {
        c.optimizer.bump_amplitude = to_double(key, value);
    } else if (key == "optimizer.bump_count") {
        c.optimizer.bump_count = to_int(key, value);
    } else if (key == "optimizer.verify") {
        c.optimizer.verify = to_bool(key, value);
    } else if (key == "optimizer.repeats") {
        c.repeats = to_int(key, value);
    } else {
        throw Error(msg("config: unknown key '", key, "'"));
    }
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(msg("cannot open config '", path, "'"));
    RunConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(msg("config ", path, ":", line_no, ": expected 'key = value'"));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw Error(msg("config ", path, ":", line_no, ": empty key or value"));
        apply_key(config, key, value);
    }
    return config;
}

RunConfig default_config() { return RunConfig{}; }

} // namespace uadbo::cli
