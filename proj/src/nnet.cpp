#include "wmhlab/nnet.hpp"

#include "wmhlab/rng.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace wmhlab::nnet {

using kern::Dims3;

std::string variant_name(Variant v) {
    return v == Variant::weak_regression ? "weak" : "strong";
}

Variant variant_from_name(const std::string& name) {
    if (name == "weak") return Variant::weak_regression;
    if (name == "strong") return Variant::strong_segmentation;
    throw ConfigError("unknown network variant: " + name);
}

void NetworkSpec::validate() const {
    if (base_filters < 1) throw ConfigError("NetworkSpec: base_filters must be >= 1");
    if (input_dims.nx <= 0 || input_dims.ny <= 0 || input_dims.nz <= 0)
        throw ConfigError("NetworkSpec: input dims must be positive");
    if (input_dims.nx % 2 || input_dims.ny % 2 || input_dims.nz % 2)
        throw ConfigError("NetworkSpec: input dims must be divisible by 2 for the pooling step");
}

std::int64_t Weights::parameter_count() const {
    std::int64_t total = 0;
    for_each_param([&](const std::string&, const std::vector<double>& p) {
        total += static_cast<std::int64_t>(p.size());
    });
    return total;
}

void Weights::for_each_param(const std::function<void(const std::string&, std::vector<double>&)>& fn) {
    fn("enc1a.w", enc1a.w);
    fn("enc1a.b", enc1a.b);
    fn("enc1b.w", enc1b.w);
    fn("enc1b.b", enc1b.b);
    fn("enc2a.w", enc2a.w);
    fn("enc2a.b", enc2a.b);
    fn("enc2b.w", enc2b.w);
    fn("enc2b.b", enc2b.b);
    fn("dec1.w", dec1.w);
    fn("dec1.b", dec1.b);
    fn("dec2.w", dec2.w);
    fn("dec2.b", dec2.b);
    fn("head.w", head_w);
    fn("head.b", head_b);
}

void Weights::for_each_param(
    const std::function<void(const std::string&, const std::vector<double>&)>& fn) const {
    const_cast<Weights*>(this)->for_each_param(
        [&](const std::string& name, std::vector<double>& p) { fn(name, p); });
}

Weights Weights::zeros_like() const {
    Weights z = *this;
    z.for_each_param([](const std::string&, std::vector<double>& p) {
        std::fill(p.begin(), p.end(), 0.0);
    });
    return z;
}

namespace {

ConvParam init_conv(int cout, int cin, Rng& rng) {
    ConvParam p;
    p.cout = cout;
    p.cin = cin;
    p.w.resize(static_cast<std::size_t>(cout) * cin * 27);
    p.b.assign(cout, 0.0);
    const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * 27.0));
    for (double& w : p.w) w = rng.uniform(-bound, bound);
    return p;
}

void conv_layer(const ConvParam& p, const DTensor& in, DTensor& out) {
    kern::conv3x3_forward(in.v.data(), p.cin, in.dims, p.w.data(), p.b.data(), p.cout, out.v.data());
}

void add_conv_grads(const std::vector<double>& gw, const std::vector<double>& gb, ConvParam& dst) {
    for (std::size_t i = 0; i < gw.size(); ++i) dst.w[i] += gw[i];
    for (std::size_t i = 0; i < gb.size(); ++i) dst.b[i] += gb[i];
}

} // namespace

Weights build_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Weights w;
    w.spec = spec;
    w.init_seed = seed;
    Rng rng(mix_seed(seed, 0xb11dULL));
    const int f = spec.base_filters;
    w.enc1a = init_conv(f, 1, rng);
    w.enc1b = init_conv(f, f, rng);
    w.enc2a = init_conv(2 * f, f, rng);
    w.enc2b = init_conv(2 * f, 2 * f, rng);
    w.dec1 = init_conv(f, 3 * f, rng);
    w.dec2 = init_conv(f, f, rng);
    const double hb = std::sqrt(6.0 / f);
    w.head_w.resize(f);
    for (double& x : w.head_w) x = rng.uniform(-hb, hb);
    // the segmentation head starts at a low foreground prior so the Dice loss
    // does not immediately collapse the sparse foreground class
    w.head_b.assign(1, spec.variant == Variant::strong_segmentation ? -2.5 : 0.0);
    return w;
}

void body_forward(const Weights& w, const DTensor& input, BodyCache& c) {
    const NetworkSpec& spec = w.spec;
    if (input.channels != 1 || !(input.dims == spec.input_dims))
        throw ConfigError("body_forward: input shape does not match the network spec");
    const int f = spec.base_filters;
    const Dims3 d = spec.input_dims;
    const Dims3 h{d.nx / 2, d.ny / 2, d.nz / 2};
    const std::int64_t n = d.count();

    c.input = input;
    c.pre1a = DTensor::zeros(f, d);
    conv_layer(w.enc1a, c.input, c.pre1a);
    c.act1a = DTensor::zeros(f, d);
    kern::relu_forward(c.pre1a.v.data(), static_cast<std::int64_t>(c.pre1a.v.size()), c.act1a.v.data());
    c.pre1b = DTensor::zeros(f, d);
    conv_layer(w.enc1b, c.act1a, c.pre1b);
    c.skip = DTensor::zeros(f, d);
    kern::relu_forward(c.pre1b.v.data(), static_cast<std::int64_t>(c.pre1b.v.size()), c.skip.v.data());

    c.pooled = DTensor::zeros(f, h);
    c.pool_argmax.resize(c.pooled.v.size());
    kern::maxpool2_forward(c.skip.v.data(), f, d, c.pooled.v.data(), c.pool_argmax.data());

    c.pre2a = DTensor::zeros(2 * f, h);
    conv_layer(w.enc2a, c.pooled, c.pre2a);
    c.act2a = DTensor::zeros(2 * f, h);
    kern::relu_forward(c.pre2a.v.data(), static_cast<std::int64_t>(c.pre2a.v.size()), c.act2a.v.data());
    c.pre2b = DTensor::zeros(2 * f, h);
    conv_layer(w.enc2b, c.act2a, c.pre2b);
    c.act2b = DTensor::zeros(2 * f, h);
    kern::relu_forward(c.pre2b.v.data(), static_cast<std::int64_t>(c.pre2b.v.size()), c.act2b.v.data());

    c.upsampled = DTensor::zeros(2 * f, d);
    kern::upsample2_forward(c.act2b.v.data(), 2 * f, h, c.upsampled.v.data());

    c.cat = DTensor::zeros(3 * f, d);
    std::memcpy(c.cat.v.data(), c.skip.v.data(), sizeof(double) * f * n);
    std::memcpy(c.cat.v.data() + static_cast<std::int64_t>(f) * n, c.upsampled.v.data(),
                sizeof(double) * 2 * f * n);

    c.pre_d1 = DTensor::zeros(f, d);
    conv_layer(w.dec1, c.cat, c.pre_d1);
    c.act_d1 = DTensor::zeros(f, d);
    kern::relu_forward(c.pre_d1.v.data(), static_cast<std::int64_t>(c.pre_d1.v.size()), c.act_d1.v.data());
    c.features = DTensor::zeros(f, d);
    conv_layer(w.dec2, c.act_d1, c.features);
}

void body_backward(const Weights& w, const BodyCache& c, DTensor& d_features, Weights& grads) {
    const int f = w.spec.base_filters;
    const Dims3 d = w.spec.input_dims;
    const Dims3 h{d.nx / 2, d.ny / 2, d.nz / 2};
    const std::int64_t n = d.count();

    std::vector<double> gw, gb;

    // dec2 (its output has no activation)
    DTensor d_act_d1 = DTensor::zeros(f, d);
    kern::conv3x3_backward_input(d_features.v.data(), f, d, w.dec2.w.data(), f, d_act_d1.v.data());
    gw.resize(w.dec2.w.size());
    gb.resize(w.dec2.b.size());
    kern::conv3x3_backward_params(d_features.v.data(), f, c.act_d1.v.data(), f, d, gw.data(), gb.data());
    add_conv_grads(gw, gb, grads.dec2);

    DTensor d_pre_d1 = DTensor::zeros(f, d);
    kern::relu_backward(d_act_d1.v.data(), c.pre_d1.v.data(),
                        static_cast<std::int64_t>(d_act_d1.v.size()), d_pre_d1.v.data());

    DTensor d_cat = DTensor::zeros(3 * f, d);
    kern::conv3x3_backward_input(d_pre_d1.v.data(), f, d, w.dec1.w.data(), 3 * f, d_cat.v.data());
    gw.resize(w.dec1.w.size());
    gb.resize(w.dec1.b.size());
    kern::conv3x3_backward_params(d_pre_d1.v.data(), f, c.cat.v.data(), 3 * f, d, gw.data(), gb.data());
    add_conv_grads(gw, gb, grads.dec1);

    // split the concatenation: first f channels feed the skip, the rest the upsample
    DTensor d_skip = DTensor::zeros(f, d);
    std::memcpy(d_skip.v.data(), d_cat.v.data(), sizeof(double) * f * n);
    DTensor d_up = DTensor::zeros(2 * f, d);
    std::memcpy(d_up.v.data(), d_cat.v.data() + static_cast<std::int64_t>(f) * n,
                sizeof(double) * 2 * f * n);

    DTensor d_act2b = DTensor::zeros(2 * f, h);
    kern::upsample2_backward(d_up.v.data(), 2 * f, d, d_act2b.v.data());

    DTensor d_pre2b = DTensor::zeros(2 * f, h);
    kern::relu_backward(d_act2b.v.data(), c.pre2b.v.data(),
                        static_cast<std::int64_t>(d_act2b.v.size()), d_pre2b.v.data());
    DTensor d_act2a = DTensor::zeros(2 * f, h);
    kern::conv3x3_backward_input(d_pre2b.v.data(), 2 * f, h, w.enc2b.w.data(), 2 * f, d_act2a.v.data());
    gw.resize(w.enc2b.w.size());
    gb.resize(w.enc2b.b.size());
    kern::conv3x3_backward_params(d_pre2b.v.data(), 2 * f, c.act2a.v.data(), 2 * f, h, gw.data(),
                                  gb.data());
    add_conv_grads(gw, gb, grads.enc2b);

    DTensor d_pre2a = DTensor::zeros(2 * f, h);
    kern::relu_backward(d_act2a.v.data(), c.pre2a.v.data(),
                        static_cast<std::int64_t>(d_act2a.v.size()), d_pre2a.v.data());
    DTensor d_pooled = DTensor::zeros(f, h);
    kern::conv3x3_backward_input(d_pre2a.v.data(), 2 * f, h, w.enc2a.w.data(), f, d_pooled.v.data());
    gw.resize(w.enc2a.w.size());
    gb.resize(w.enc2a.b.size());
    kern::conv3x3_backward_params(d_pre2a.v.data(), 2 * f, c.pooled.v.data(), f, h, gw.data(), gb.data());
    add_conv_grads(gw, gb, grads.enc2a);

    // the skip tensor feeds both the pool and the concatenation: sum both paths
    DTensor d_skip_pool = DTensor::zeros(f, d);
    kern::maxpool2_backward(d_pooled.v.data(), f, h, c.pool_argmax.data(), d, d_skip_pool.v.data());
    for (std::size_t i = 0; i < d_skip.v.size(); ++i) d_skip.v[i] += d_skip_pool.v[i];

    DTensor d_pre1b = DTensor::zeros(f, d);
    kern::relu_backward(d_skip.v.data(), c.pre1b.v.data(),
                        static_cast<std::int64_t>(d_skip.v.size()), d_pre1b.v.data());
    DTensor d_act1a = DTensor::zeros(f, d);
    kern::conv3x3_backward_input(d_pre1b.v.data(), f, d, w.enc1b.w.data(), f, d_act1a.v.data());
    gw.resize(w.enc1b.w.size());
    gb.resize(w.enc1b.b.size());
    kern::conv3x3_backward_params(d_pre1b.v.data(), f, c.act1a.v.data(), f, d, gw.data(), gb.data());
    add_conv_grads(gw, gb, grads.enc1b);

    DTensor d_pre1a = DTensor::zeros(f, d);
    kern::relu_backward(d_act1a.v.data(), c.pre1a.v.data(),
                        static_cast<std::int64_t>(d_act1a.v.size()), d_pre1a.v.data());
    gw.resize(w.enc1a.w.size());
    gb.resize(w.enc1a.b.size());
    kern::conv3x3_backward_params(d_pre1a.v.data(), f, c.input.v.data(), 1, d, gw.data(), gb.data());
    add_conv_grads(gw, gb, grads.enc1a);
}

DTensor image_to_tensor(const Volume3D& image) {
    DTensor t = DTensor::zeros(1, image.dims);
    for (std::size_t i = 0; i < image.data.size(); ++i) t.v[i] = image.data[i];
    return t;
}

Volume3D field_to_volume(const std::vector<double>& field, Dims3 dims,
                         const std::array<double, 3>& spacing) {
    Volume3D v;
    v.dims = dims;
    v.spacing = spacing;
    v.data.resize(field.size());
    for (std::size_t i = 0; i < field.size(); ++i) v.data[i] = static_cast<float>(field[i]);
    return v;
}

WeakForward forward_weak(const Weights& w, const Volume3D& image, BodyCache& cache) {
    if (w.spec.variant != Variant::weak_regression)
        throw ConfigError("forward_weak: not a weak-regression network");
    body_forward(w, image_to_tensor(image), cache);
    WeakForward out;
    out.gap.resize(w.spec.base_filters);
    kern::channel_means(cache.features.v.data(), w.spec.base_filters, cache.features.dims,
                        out.gap.data());
    double y = w.head_b[0];
    for (int c = 0; c < w.spec.base_filters; ++c) y += w.head_w[c] * out.gap[c];
    out.y_hat = y;
    return out;
}

void backward_weak(const Weights& w, const BodyCache& cache, const WeakForward& fwd,
                   double d_y_hat, Weights& grads) {
    const int f = w.spec.base_filters;
    const std::int64_t n = cache.features.voxels();
    for (int c = 0; c < f; ++c) grads.head_w[c] += d_y_hat * fwd.gap[c];
    grads.head_b[0] += d_y_hat;
    DTensor d_features = DTensor::zeros(f, cache.features.dims);
    for (int c = 0; c < f; ++c) {
        const double g = d_y_hat * w.head_w[c] / static_cast<double>(n);
        double* p = d_features.ch(c);
        for (std::int64_t i = 0; i < n; ++i) p[i] = g;
    }
    body_backward(w, cache, d_features, grads);
}

DTensor forward_strong(const Weights& w, const Volume3D& image, BodyCache& cache) {
    if (w.spec.variant != Variant::strong_segmentation)
        throw ConfigError("forward_strong: not a strong-segmentation network");
    body_forward(w, image_to_tensor(image), cache);
    const std::int64_t n = cache.features.voxels();
    DTensor prob = DTensor::zeros(1, cache.features.dims);
    const std::vector<double> logits = attention_map(cache.features, w.head_w);
    for (std::int64_t i = 0; i < n; ++i)
        prob.v[i] = 1.0 / (1.0 + std::exp(-(logits[i] + w.head_b[0])));
    return prob;
}

void backward_strong(const Weights& w, const BodyCache& cache, const DTensor& prob,
                     const DTensor& d_prob, Weights& grads) {
    const int f = w.spec.base_filters;
    const std::int64_t n = cache.features.voxels();
    // through the sigmoid
    std::vector<double> d_logit(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        d_logit[i] = d_prob.v[i] * prob.v[i] * (1.0 - prob.v[i]);

    double db = 0.0;
    for (std::int64_t i = 0; i < n; ++i) db += d_logit[i];
    grads.head_b[0] += db;
    DTensor d_features = DTensor::zeros(f, cache.features.dims);
    for (int c = 0; c < f; ++c) {
        const double* fc = cache.features.ch(c);
        double* dc = d_features.ch(c);
        double dw = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            dw += d_logit[i] * fc[i];
            dc[i] = d_logit[i] * w.head_w[c];
        }
        grads.head_w[c] += dw;
    }
    body_backward(w, cache, d_features, grads);
}

std::vector<double> attention_map(const DTensor& features, const std::vector<double>& head_w) {
    if (static_cast<int>(head_w.size()) != features.channels)
        throw ConfigError("attention_map: head weight length != channel count");
    const std::int64_t n = features.voxels();
    std::vector<double> a(static_cast<std::size_t>(n), 0.0);
    for (int c = 0; c < features.channels; ++c) {
        const double wc = head_w[c];
        const double* fc = features.ch(c);
        for (std::int64_t i = 0; i < n; ++i) a[i] += wc * fc[i];
    }
    return a;
}

static_assert(std::endian::native == std::endian::little,
              "checkpoint tensors are little-endian");

using ordered_json = nlohmann::ordered_json;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    ordered_json meta;
    meta["magic"] = "WMHCKPT1";
    meta["variant"] = variant_name(ckpt.weights.spec.variant);
    meta["base_filters"] = ckpt.weights.spec.base_filters;
    meta["input_dims"] = {ckpt.weights.spec.input_dims.nx, ckpt.weights.spec.input_dims.ny,
                          ckpt.weights.spec.input_dims.nz};
    meta["init_seed"] = ckpt.weights.init_seed;
    meta["seed"] = ckpt.seed;
    meta["volume_scale"] = ckpt.volume_scale;
    if (ckpt.severity_bin_edges) {
        meta["severity_bin_edges"] = *ckpt.severity_bin_edges;
    } else {
        meta["severity_bin_edges"] = nullptr;
    }
    ordered_json tensors = ordered_json::array();
    ckpt.weights.for_each_param([&](const std::string& name, const std::vector<double>& p) {
        tensors.push_back({{"name", name}, {"len", p.size()}});
    });
    meta["tensors"] = tensors;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    const std::string line = meta.dump();
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.put('\n');
    ckpt.weights.for_each_param([&](const std::string&, const std::vector<double>& p) {
        out.write(reinterpret_cast<const char*>(p.data()),
                  static_cast<std::streamsize>(p.size() * sizeof(double)));
    });
    if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw BadMagicError("checkpoint: cannot read header: " + path.string());
    ordered_json meta = ordered_json::parse(line, nullptr, false);
    if (meta.is_discarded() || !meta.contains("magic") || meta["magic"] != "WMHCKPT1")
        throw BadMagicError("checkpoint: bad magic in " + path.string());

    Checkpoint ckpt;
    try {
        NetworkSpec spec;
        spec.variant = variant_from_name(meta.at("variant").get<std::string>());
        spec.base_filters = meta.at("base_filters").get<int>();
        spec.input_dims = {meta.at("input_dims").at(0).get<int>(),
                           meta.at("input_dims").at(1).get<int>(),
                           meta.at("input_dims").at(2).get<int>()};
        ckpt.weights = build_network(spec, meta.at("init_seed").get<std::uint64_t>());
        ckpt.seed = meta.at("seed").get<std::uint64_t>();
        ckpt.volume_scale = meta.at("volume_scale").get<double>();
        if (!meta.at("severity_bin_edges").is_null()) {
            std::array<double, 4> edges{};
            for (int i = 0; i < 4; ++i) edges[i] = meta.at("severity_bin_edges").at(i).get<double>();
            ckpt.severity_bin_edges = edges;
        }
        std::size_t idx = 0;
        ckpt.weights.for_each_param([&](const std::string& name, std::vector<double>& p) {
            const auto& t = meta.at("tensors").at(idx++);
            if (t.at("name") != name || t.at("len").get<std::size_t>() != p.size())
                throw PayloadMismatchError("checkpoint: tensor layout mismatch in " + path.string());
        });
    } catch (const ordered_json::exception& e) {
        throw DataError("checkpoint: malformed metadata in " + path.string() + ": " + e.what());
    }
    bool short_read = false;
    ckpt.weights.for_each_param([&](const std::string&, std::vector<double>& p) {
        in.read(reinterpret_cast<char*>(p.data()),
                static_cast<std::streamsize>(p.size() * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != p.size() * sizeof(double)) short_read = true;
    });
    if (short_read)
        throw PayloadMismatchError("checkpoint: truncated tensor data in " + path.string());
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw PayloadMismatchError("checkpoint: trailing bytes in " + path.string());
    return ckpt;
}

} // namespace wmhlab::nnet
