#include "fedafa/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedafa/errors.hpp"

namespace fedafa {

std::string method_name(Method m) {
    switch (m) {
    case Method::local: return "local";
    case Method::fedavg_ft: return "fedavg_ft";
    case Method::fedavg_ros: return "fedavg_ros";
    case Method::fedafa: return "fedafa";
    case Method::fedafa_loc: return "fedafa_loc";
    }
    throw ConfigError("method_name: unknown method");
}

Method parse_method(const std::string& name) {
    if (name == "local") return Method::local;
    if (name == "fedavg_ft") return Method::fedavg_ft;
    if (name == "fedavg_ros") return Method::fedavg_ros;
    if (name == "fedafa") return Method::fedafa;
    if (name == "fedafa_loc") return Method::fedafa_loc;
    throw ConfigError("unknown method '" + name +
                      "' (expected local, fedavg_ft, fedavg_ros, fedafa, fedafa_loc)");
}

std::vector<std::size_t> ExperimentConfig::layer_sizes() const {
    std::vector<std::size_t> sizes;
    sizes.push_back(dim);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(classes);
    return sizes;
}

AugmentationConfig ExperimentConfig::augmentation() const {
    AugmentationConfig aug;
    aug.drop_probability = drop_probability;
    aug.iterations = perturb_iterations;
    aug.step_size_scale = step_size_scale;
    aug.max_attempts_per_slot = max_attempts_per_slot;
    aug.perturb_classifier = perturb_classifier;
    return aug;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (classes < 2) fail("data.classes must be >= 2");
    if (dim < 2) fail("data.dim must be >= 2");
    if (samples_per_class == 0) fail("data.samples_per_class must be positive");
    if (cluster_spread < 0.0) fail("data.cluster_spread must be >= 0");
    if (imbalance_factor < 1.0) fail("data.imbalance_factor must be >= 1");
    if (clients < 1) fail("partition.clients must be >= 1");
    if (alpha <= 0.0) fail("partition.alpha must be > 0");
    if (hidden.empty()) fail("model.hidden must list at least one width");
    for (std::size_t h : hidden) {
        if (h == 0) fail("model.hidden widths must be positive");
    }
    if (boundary_index >= hidden.size()) {
        fail("model.boundary_index " + std::to_string(boundary_index) +
             " must be < number of hidden layers (" + std::to_string(hidden.size()) + ")");
    }
    if (clients_per_round < 1 || clients_per_round > clients) {
        fail("train.clients_per_round must be in [1, clients]");
    }
    if (batch_size == 0) fail("train.batch_size must be positive");
    if (learning_rate <= 0.0) fail("train.lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) fail("train.momentum must be in [0, 1)");
    if (weight_decay < 0.0) fail("train.weight_decay must be >= 0");
    if (threads < 1) fail("train.threads must be >= 1");
    if (eval_every < 1) fail("train.eval_every must be >= 1");
    if (personalize_batch_size == 0) fail("personalize.batch_size must be positive");
    if (personalize_lr <= 0.0) fail("personalize.lr must be > 0");
    if (lambda < 0.0 || lambda > 1.0) fail("fedafa.lambda must be in [0, 1]");
    if (drop_probability <= 0.0 || drop_probability >= 1.0) {
        fail("fedafa.drop_probability must be in (0, 1)");
    }
    if (perturb_iterations < 1) fail("fedafa.perturb_iterations must be >= 1");
    if (step_size_scale <= 0.0) fail("fedafa.step_size_scale must be > 0");
    if (max_attempts_per_slot < 1) fail("fedafa.max_attempts_per_slot must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::size_t to_size(const std::string& v, const std::string& key) {
    try {
        const long long n = std::stoll(v);
        if (n < 0) {
            throw ConfigError("config: " + key + " must be >= 0, got " + v);
        }
        return static_cast<std::size_t>(n);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects an unsigned integer, got '" + v + "'");
    }
}

std::vector<std::size_t> to_size_list(const std::string& v, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(to_size(item, key));
        }
    }
    if (out.empty()) {
        throw ConfigError("config: " + key + " expects a comma-separated list, got '" + v + "'");
    }
    return out;
}

} // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) {
            continue;
        }
        if (stripped.front() == '[') {
            if (stripped.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unterminated section header");
            }
            section = trim(stripped.substr(1, stripped.size() - 2));
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value, got '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        const std::string full = section + "." + key;

        if (full == "data.classes") cfg.classes = to_size(value, full);
        else if (full == "data.dim") cfg.dim = to_size(value, full);
        else if (full == "data.samples_per_class") cfg.samples_per_class = to_size(value, full);
        else if (full == "data.test_per_class") cfg.test_per_class = to_size(value, full);
        else if (full == "data.cluster_spread") cfg.cluster_spread = to_double(value, full);
        else if (full == "data.imbalance_factor") cfg.imbalance_factor = to_double(value, full);
        else if (full == "partition.clients") cfg.clients = to_size(value, full);
        else if (full == "partition.alpha") cfg.alpha = to_double(value, full);
        else if (full == "partition.seed") cfg.seed = to_u64(value, full);
        else if (full == "model.hidden") cfg.hidden = to_size_list(value, full);
        else if (full == "model.boundary_index") cfg.boundary_index = to_size(value, full);
        else if (full == "train.method") cfg.method = parse_method(value);
        else if (full == "train.rounds") cfg.rounds = to_size(value, full);
        else if (full == "train.clients_per_round") cfg.clients_per_round = to_size(value, full);
        else if (full == "train.local_epochs") cfg.local_epochs = to_size(value, full);
        else if (full == "train.batch_size") cfg.batch_size = to_size(value, full);
        else if (full == "train.lr") cfg.learning_rate = to_double(value, full);
        else if (full == "train.momentum") cfg.momentum = to_double(value, full);
        else if (full == "train.weight_decay") cfg.weight_decay = to_double(value, full);
        else if (full == "train.threads") cfg.threads = to_size(value, full);
        else if (full == "train.eval_every") cfg.eval_every = to_size(value, full);
        else if (full == "personalize.epochs") cfg.personalize_epochs = to_size(value, full);
        else if (full == "personalize.batch_size") cfg.personalize_batch_size = to_size(value, full);
        else if (full == "personalize.lr") cfg.personalize_lr = to_double(value, full);
        else if (full == "personalize.local_baseline_epochs") cfg.local_baseline_epochs = to_size(value, full);
        else if (full == "personalize.per_round") {
            if (value == "true") cfg.per_round = true;
            else if (value == "false") cfg.per_round = false;
            else throw ConfigError("config: personalize.per_round must be true or false");
        }
        else if (full == "fedafa.lambda") cfg.lambda = to_double(value, full);
        else if (full == "fedafa.drop_probability") cfg.drop_probability = to_double(value, full);
        else if (full == "fedafa.perturb_iterations") cfg.perturb_iterations = to_size(value, full);
        else if (full == "fedafa.step_size_scale") cfg.step_size_scale = to_double(value, full);
        else if (full == "fedafa.max_attempts_per_slot") cfg.max_attempts_per_slot = to_size(value, full);
        else if (full == "fedafa.debug_dump") {
            if (value == "true") cfg.aug_debug_dump = true;
            else if (value == "false") cfg.aug_debug_dump = false;
            else throw ConfigError("config: fedafa.debug_dump must be true or false");
        } else if (full == "fedafa.perturb_classifier") {
            if (value == "personalized") {
                cfg.perturb_classifier = AugmentationConfig::PerturbClassifier::personalized;
            } else if (value == "global") {
                cfg.perturb_classifier = AugmentationConfig::PerturbClassifier::global;
            } else {
                throw ConfigError("config: fedafa.perturb_classifier must be "
                                  "'personalized' or 'global', got '" + value + "'");
            }
        } else {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                              full + "'");
        }
    }
    cfg.validate();
    return cfg;
}

namespace {

std::string format_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

} // namespace

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "[data]\n";
    out << "classes = " << cfg.classes << "\n";
    out << "dim = " << cfg.dim << "\n";
    out << "samples_per_class = " << cfg.samples_per_class << "\n";
    out << "test_per_class = " << cfg.test_per_class << "\n";
    out << "cluster_spread = " << format_double(cfg.cluster_spread) << "\n";
    out << "imbalance_factor = " << format_double(cfg.imbalance_factor) << "\n";
    out << "\n[partition]\n";
    out << "clients = " << cfg.clients << "\n";
    out << "alpha = " << format_double(cfg.alpha) << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "\n[model]\n";
    out << "hidden = ";
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        out << (i ? "," : "") << cfg.hidden[i];
    }
    out << "\n";
    out << "boundary_index = " << cfg.boundary_index << "\n";
    out << "\n[train]\n";
    out << "method = " << method_name(cfg.method) << "\n";
    out << "rounds = " << cfg.rounds << "\n";
    out << "clients_per_round = " << cfg.clients_per_round << "\n";
    out << "local_epochs = " << cfg.local_epochs << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "lr = " << format_double(cfg.learning_rate) << "\n";
    out << "momentum = " << format_double(cfg.momentum) << "\n";
    out << "weight_decay = " << format_double(cfg.weight_decay) << "\n";
    out << "threads = " << cfg.threads << "\n";
    out << "eval_every = " << cfg.eval_every << "\n";
    out << "\n[personalize]\n";
    out << "epochs = " << cfg.personalize_epochs << "\n";
    out << "batch_size = " << cfg.personalize_batch_size << "\n";
    out << "lr = " << format_double(cfg.personalize_lr) << "\n";
    out << "local_baseline_epochs = " << cfg.local_baseline_epochs << "\n";
    out << "per_round = " << (cfg.per_round ? "true" : "false") << "\n";
    out << "\n[fedafa]\n";
    out << "lambda = " << format_double(cfg.lambda) << "\n";
    out << "drop_probability = " << format_double(cfg.drop_probability) << "\n";
    out << "perturb_iterations = " << cfg.perturb_iterations << "\n";
    out << "step_size_scale = " << format_double(cfg.step_size_scale) << "\n";
    out << "max_attempts_per_slot = " << cfg.max_attempts_per_slot << "\n";
    out << "perturb_classifier = "
        << (cfg.perturb_classifier == AugmentationConfig::PerturbClassifier::personalized
                ? "personalized"
                : "global")
        << "\n";
    out << "debug_dump = " << (cfg.aug_debug_dump ? "true" : "false") << "\n";
    return out.str();
}

ExperimentConfig paper_mini_config() {
    return ExperimentConfig{};
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    ExperimentConfig cfg = parse_config(buf.str());
    if (const char* env = std::getenv("FEDAFA_SEED")) {
        cfg.seed = to_u64(env, "FEDAFA_SEED");
    }
    return cfg;
}

} // namespace fedafa
