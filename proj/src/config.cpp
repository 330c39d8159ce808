#include "d2a/config.hpp"

#include <fstream>
#include <sstream>

namespace d2a {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stoll(item));
    }
    return out;
}

std::string join(const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

template <typename T, typename Fn>
void get(const KeyValueMap& kv, const std::string& key, T& out, Fn parse) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    try {
        out = parse(it->second);
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "' has invalid value '" + it->second +
                                 "'");
    }
}

auto as_ll = [](const std::string& s) { return std::stoll(s); };
auto as_ull = [](const std::string& s) { return std::stoull(s); };
auto as_d = [](const std::string& s) { return std::stod(s); };
auto as_str = [](const std::string& s) { return s; };
auto as_bool = [](const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw std::runtime_error("not a boolean");
};

}  // namespace

KeyValueMap parse_config_text(const std::string& text) {
    KeyValueMap kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        check(eq != std::string::npos,
              "config line " + std::to_string(lineno) + " is not 'key = value': " + line);
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValueMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    check((bool)in, "cannot read config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

ModelConfig model_config_from(const KeyValueMap& kv) {
    ModelConfig c;
    get(kv, "encoder", c.encoder, as_str);
    get(kv, "encoder_channels", c.encoder_channels, parse_int_list);
    get(kv, "decoder_channels", c.decoder_channels, parse_int_list);
    get(kv, "reduce_ratio", c.reduce_ratio, as_ll);
    get(kv, "input_extent", c.input_extent, as_ll);
    get(kv, "resnext_cardinality", c.resnext_cardinality, as_ll);
    c.validate();
    return c;
}

TrainConfig train_config_from(const KeyValueMap& kv) {
    TrainConfig c;
    get(kv, "lr", c.lr, as_d);
    get(kv, "beta1", c.beta1, as_d);
    get(kv, "beta2", c.beta2, as_d);
    get(kv, "eps", c.eps, as_d);
    get(kv, "weight_decay", c.weight_decay, as_d);
    get(kv, "plateau_factor", c.plateau_factor, as_d);
    get(kv, "plateau_patience", c.plateau_patience, as_ll);
    get(kv, "improvement_eps", c.improvement_eps, as_d);
    get(kv, "batch_size", c.batch_size, as_ll);
    get(kv, "epochs", c.epochs, as_ll);
    get(kv, "seed", c.seed, as_ull);
    get(kv, "train_frac", c.train_frac, as_d);
    get(kv, "val_frac", c.val_frac, as_d);
    get(kv, "test_frac", c.test_frac, as_d);
    get(kv, "micro_metrics", c.micro_metrics, as_bool);
    c.validate();
    return c;
}

AugmentConfig augment_config_from(const KeyValueMap& kv) {
    AugmentConfig c;
    get(kv, "resize_to", c.resize_to, as_ll);
    get(kv, "crop_to", c.crop_to, as_ll);
    get(kv, "flip_prob", c.flip_prob, as_d);
    get(kv, "rotation_deg", c.rotation_deg, as_d);
    get(kv, "gamma_min", c.gamma_min, as_d);
    get(kv, "gamma_max", c.gamma_max, as_d);
    get(kv, "log_transform_prob", c.log_transform_prob, as_d);
    c.validate();
    return c;
}

std::string serialize_model_config(const ModelConfig& c) {
    std::ostringstream os;
    os << "encoder = " << c.encoder << "\n";
    os << "encoder_channels = " << join(c.encoder_channels) << "\n";
    if (!c.decoder_channels.empty()) os << "decoder_channels = " << join(c.decoder_channels) << "\n";
    os << "reduce_ratio = " << c.reduce_ratio << "\n";
    os << "input_extent = " << c.input_extent << "\n";
    os << "resnext_cardinality = " << c.resnext_cardinality << "\n";
    return os.str();
}

std::string serialize_train_config(const TrainConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "lr = " << c.lr << "\n"
       << "beta1 = " << c.beta1 << "\n"
       << "beta2 = " << c.beta2 << "\n"
       << "eps = " << c.eps << "\n"
       << "weight_decay = " << c.weight_decay << "\n"
       << "plateau_factor = " << c.plateau_factor << "\n"
       << "plateau_patience = " << c.plateau_patience << "\n"
       << "improvement_eps = " << c.improvement_eps << "\n"
       << "batch_size = " << c.batch_size << "\n"
       << "epochs = " << c.epochs << "\n"
       << "seed = " << c.seed << "\n"
       << "train_frac = " << c.train_frac << "\n"
       << "val_frac = " << c.val_frac << "\n"
       << "test_frac = " << c.test_frac << "\n"
       << "micro_metrics = " << (c.micro_metrics ? "true" : "false") << "\n";
    return os.str();
}

std::string serialize_augment_config(const AugmentConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "resize_to = " << c.resize_to << "\n"
       << "crop_to = " << c.crop_to << "\n"
       << "flip_prob = " << c.flip_prob << "\n"
       << "rotation_deg = " << c.rotation_deg << "\n"
       << "gamma_min = " << c.gamma_min << "\n"
       << "gamma_max = " << c.gamma_max << "\n"
       << "log_transform_prob = " << c.log_transform_prob << "\n";
    return os.str();
}

}  // namespace d2a
