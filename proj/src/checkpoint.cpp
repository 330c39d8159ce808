#include "d2a/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace d2a {

namespace {

constexpr char kMagic[8] = {'D', '2', 'A', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void w_u32(std::ostream& o, uint32_t v) { o.write((const char*)&v, 4); }
void w_u64(std::ostream& o, uint64_t v) { o.write((const char*)&v, 8); }
void w_f64(std::ostream& o, double v) { o.write((const char*)&v, 8); }
void w_str(std::ostream& o, const std::string& s) {
    w_u64(o, s.size());
    o.write(s.data(), (std::streamsize)s.size());
}
void w_f32s(std::ostream& o, const std::vector<float>& v) {
    w_u64(o, v.size());
    o.write((const char*)v.data(), (std::streamsize)(v.size() * 4));
}

uint32_t r_u32(std::istream& i) {
    uint32_t v;
    i.read((char*)&v, 4);
    return v;
}
uint64_t r_u64(std::istream& i) {
    uint64_t v;
    i.read((char*)&v, 8);
    return v;
}
double r_f64(std::istream& i) {
    double v;
    i.read((char*)&v, 8);
    return v;
}
std::string r_str(std::istream& i) {
    uint64_t n = r_u64(i);
    std::string s(n, '\0');
    i.read(s.data(), (std::streamsize)n);
    return s;
}
std::vector<float> r_f32s(std::istream& i) {
    uint64_t n = r_u64(i);
    std::vector<float> v(n);
    i.read((char*)v.data(), (std::streamsize)(n * 4));
    return v;
}

std::string config_block(const TrainerState& st) {
    std::string s;
    s += "[model]\n" + serialize_model_config(st.model_cfg);
    s += "upsample = bilinear_align_corners_false\n";
    s += "[train]\n" + serialize_train_config(st.train_cfg);
    s += "[augment]\n" + serialize_augment_config(st.aug_cfg);
    return s;
}

KeyValueMap section(const std::string& block, const std::string& name) {
    auto start = block.find("[" + name + "]");
    check(start != std::string::npos, "checkpoint config block missing section " + name);
    start = block.find('\n', start) + 1;
    auto end = block.find("\n[", start);
    std::string body = block.substr(start, end == std::string::npos ? end : end - start);
    // drop non key=value lines
    std::string clean;
    std::stringstream ss(body);
    std::string line;
    while (std::getline(ss, line))
        if (line.find('=') != std::string::npos) clean += line + "\n";
    return parse_config_text(clean);
}

}  // namespace

void save_checkpoint(const std::string& path, D2AUNet<float>& model, Adam<float>* opt,
                     const TrainerState& st) {
    std::ofstream o(path, std::ios::binary);
    check((bool)o, "cannot write checkpoint '" + path + "'");
    o.write(kMagic, 8);
    w_u32(o, kVersion);
    w_str(o, config_block(st));
    auto params = model.params();
    w_u32(o, (uint32_t)params.size());
    for (auto& [name, t] : params) {
        w_str(o, name);
        o.put(0);  // dtype: float32
        w_u32(o, (uint32_t)t->ndim());
        for (int64_t d : t->shape()) w_u64(o, (uint64_t)d);
        w_f32s(o, t->values());
    }
    auto bufs = model.buffers();
    w_u32(o, (uint32_t)bufs.size());
    for (auto& [name, v] : bufs) {
        w_str(o, name);
        w_f32s(o, *v);
    }
    o.put(opt ? 1 : 0);
    if (opt) {
        w_u64(o, (uint64_t)opt->step_count());
        w_u32(o, (uint32_t)opt->moment1().size());
        for (auto& m : opt->moment1()) w_f32s(o, m);
        for (auto& v : opt->moment2()) w_f32s(o, v);
    }
    w_u64(o, (uint64_t)st.epoch);
    w_f64(o, st.sched.lr);
    w_f64(o, st.sched.factor);
    w_u64(o, (uint64_t)st.sched.patience);
    w_f64(o, st.sched.eps);
    w_f64(o, st.sched.best);
    o.put(st.sched.best_set ? 1 : 0);
    w_u64(o, (uint64_t)st.sched.stall);
    w_f64(o, st.best_monitor);
    o.put(st.best_set ? 1 : 0);
    w_str(o, st.rng_state);
    w_str(o, st.metrics_csv);
    check((bool)o, "short write to checkpoint '" + path + "'");
}

D2AUNet<float> load_checkpoint(const std::string& path, Adam<float>* opt, TrainerState& st) {
    std::ifstream i(path, std::ios::binary);
    check((bool)i, "cannot read checkpoint '" + path + "'");
    char magic[8];
    i.read(magic, 8);
    check(i && memcmp(magic, kMagic, 8) == 0, "'" + path + "' is not a checkpoint file");
    uint32_t ver = r_u32(i);
    check(ver == kVersion, "unsupported checkpoint version " + std::to_string(ver));
    std::string block = r_str(i);
    st.model_cfg = model_config_from(section(block, "model"));
    st.train_cfg = train_config_from(section(block, "train"));
    st.aug_cfg = augment_config_from(section(block, "augment"));
    D2AUNet<float> model(st.model_cfg, /*seed=*/0);
    auto params = model.params();
    uint32_t np = r_u32(i);
    check(np == params.size(), "checkpoint parameter count " + std::to_string(np) +
                                   " does not match model (" + std::to_string(params.size()) +
                                   "); config mismatch");
    for (auto& [name, t] : params) {
        std::string n = r_str(i);
        check(n == name, "checkpoint parameter '" + n + "' does not match expected '" + name +
                             "'; config mismatch");
        check(i.get() == 0, "unsupported tensor dtype in checkpoint");
        uint32_t nd = r_u32(i);
        Shape shape(nd);
        for (auto& d : shape) d = (int64_t)r_u64(i);
        check(shape == t->shape(), "checkpoint tensor '" + name + "' has shape " +
                                       shape_str(shape) + ", model expects " +
                                       shape_str(t->shape()));
        t->values() = r_f32s(i);
        check((int64_t)t->values().size() == numel_of(shape), "corrupt checkpoint tensor");
    }
    auto bufs = model.buffers();
    uint32_t nb = r_u32(i);
    check(nb == bufs.size(), "checkpoint buffer count mismatch; config mismatch");
    for (auto& [name, v] : bufs) {
        std::string n = r_str(i);
        check(n == name, "checkpoint buffer '" + n + "' does not match expected '" + name + "'");
        *v = r_f32s(i);
    }
    int has_opt = i.get();
    if (has_opt) {
        uint64_t steps = r_u64(i);
        uint32_t nm = r_u32(i);
        check(nm == params.size(), "optimizer state size mismatch");
        std::vector<std::vector<float>> m(nm), v(nm);
        for (auto& x : m) x = r_f32s(i);
        for (auto& x : v) x = r_f32s(i);
        if (opt) {
            *opt = Adam<float>(st.train_cfg);
            opt->set_step_count((int64_t)steps);
            opt->moment1() = std::move(m);
            opt->moment2() = std::move(v);
        }
    } else {
        check(opt == nullptr, "checkpoint '" + path + "' carries no optimizer state");
    }
    st.epoch = (int64_t)r_u64(i);
    st.sched.lr = r_f64(i);
    st.sched.factor = r_f64(i);
    st.sched.patience = (int64_t)r_u64(i);
    st.sched.eps = r_f64(i);
    st.sched.best = r_f64(i);
    st.sched.best_set = i.get() != 0;
    st.sched.stall = (int64_t)r_u64(i);
    st.best_monitor = r_f64(i);
    st.best_set = i.get() != 0;
    st.rng_state = r_str(i);
    st.metrics_csv = r_str(i);
    check((bool)i, "truncated checkpoint '" + path + "'");
    return model;
}

}  // namespace d2a
