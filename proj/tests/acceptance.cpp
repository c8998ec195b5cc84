// End-to-end acceptance checks, one line per criterion:
//   criterion N: PASS|FAIL  <detail>
// Usage: acceptance <work-dir>. Exit status is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "nightshift/grad_check.hpp"
#include "nightshift/image_io.hpp"
#include "nightshift/pipeline.hpp"

using namespace nightshift;
namespace fs = std::filesystem;
using WC = WeatherClass;
using clock_type = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

Tensor random_image(std::size_t n, Rng& rng) { return random_tensor({3, n, n}, rng); }

ModelConfig tiny_model() {
    ModelConfig m;
    m.encoder.image_size = 8;
    m.encoder.patch_size = 4;
    m.encoder.embed_dim = 8;
    m.encoder.num_layers = 1;
    m.encoder.num_heads = 2;
    m.encoder.proj_dim = 4;
    m.gan = {4, 4};
    return m;
}

std::vector<WC> random_labels(std::size_t n, Rng& rng) {
    std::vector<WC> out(n);
    for (auto& l : out) l = static_cast<WC>(rng.below(3));
    return out;
}

Tensor random_probs(std::size_t b, Rng& rng) {
    std::vector<double> v(b * 3);
    for (std::size_t i = 0; i < b; ++i) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += v[i * 3 + c] = rng.uniform(0.05, 1.0);
        for (std::size_t c = 0; c < 3; ++c) v[i * 3 + c] /= s;
    }
    return Tensor({b, 3}, std::move(v));
}

Tensor unit_rows(std::size_t n, std::size_t d, Rng& rng) {
    std::vector<double> v(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) {
            v[i * d + k] = rng.normal();
            s += v[i * d + k] * v[i * d + k];
        }
        for (std::size_t k = 0; k < d; ++k) v[i * d + k] /= std::sqrt(s);
    }
    return Tensor({n, d}, std::move(v));
}

// ---------------------------------------------------------------- scalar references

double sigmoid_ref(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double clog(double x) { return std::log(std::clamp(x, 1e-12, 1.0)); }

double classification_ref(const Tensor& p, const std::vector<WC>& y, double eps) {
    double total = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const double target = (c == index_of(y[i]) ? 1.0 - eps : 0.0) + eps / 3.0;
            total -= target * clog(p[i * 3 + c]);
        }
    return total / static_cast<double>(y.size());
}

double contrastive_ref(const Tensor& e, const std::vector<WC>& labels, const PairSet& ps, double tau) {
    const std::size_t d = e.dim(1);
    auto dot = [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += e[a * d + k] * e[b * d + k];
        return s;
    };
    double total = 0;
    for (const auto& p : ps.pairs) {
        double term = -clog(sigmoid_ref(dot(p.i, p.j) / tau));
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (labels[k] != labels[p.i]) term -= clog(1.0 - sigmoid_ref(dot(p.i, k) / tau));
        total += term;
    }
    return total / static_cast<double>(ps.size());
}

double mean_log_ref(const Discriminator& d, const std::vector<Tensor>& xs, bool complement) {
    double total = 0;
    for (const auto& x : xs) {
        const Tensor s = discriminate(d, x);
        double acc = 0;
        for (std::size_t i = 0; i < s.numel(); ++i) acc += clog(complement ? 1.0 - s[i] : s[i]);
        total += acc / static_cast<double>(s.numel());
    }
    return total / static_cast<double>(xs.size());
}

double l1_ref(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.numel());
}

std::vector<Tensor> map_ref(const Generator& g, const std::vector<Tensor>& xs) {
    std::vector<Tensor> out;
    for (const auto& x : xs) out.push_back(generate(g, x));
    return out;
}

double batch_l1_ref(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += l1_ref(a[i], b[i]);
    return s / static_cast<double>(a.size());
}

double weather_ref(const ModelBundle& b, const std::vector<ErrorMember>& members) {
    if (members.empty()) return 0.0;
    double s = 0;
    for (const auto& m : members) {
        const std::vector<Tensor> translated{generate(b.gen_night_to_day, m.image)};
        const Tensor p = b.class_probabilities(translated);
        s -= clog(p[index_of(m.label)]);
    }
    return s / static_cast<double>(members.size());
}

struct Instance {
    std::unique_ptr<ModelBundle> bundle;
    CycleGanBatch batch;
    std::vector<ErrorMember> members;
};

Instance gan_instance(std::uint64_t seed) {
    Rng rng(seed);
    Instance in;
    in.bundle = std::make_unique<ModelBundle>(tiny_model(), seed);
    const std::size_t bn = 1 + rng.below(2), bd = 1 + rng.below(2);
    for (std::size_t i = 0; i < bn; ++i) in.batch.night.push_back(random_image(8, rng));
    for (std::size_t i = 0; i < bd; ++i) in.batch.day.push_back(random_image(8, rng));
    in.members.push_back({0, static_cast<WC>(rng.below(3)), in.batch.night[0]});
    in.members.push_back({7, static_cast<WC>(rng.below(3)), random_image(8, rng)});
    return in;
}

// ---------------------------------------------------------------- criteria 1-4, 9, 10

Verdict gradient_suite() {
    Verdict v;
    const auto t0 = clock_type::now();
    constexpr double kTol = 1e-4;
    constexpr int kInstances = 5;
    double worst_overall = 0;
    auto record = [&](const std::string& name, double err) {
        worst_overall = std::max(worst_overall, err);
        v.require(err < kTol, name + " rel err " + fmt("%.2e", err));
    };
    // every parameter tensor of the listed networks, three coordinates each
    auto params_check = [&](const std::string& name, const std::function<Tensor()>& f,
                            const std::vector<NamedTensor>& params, double h) {
        double worst = 0;
        for (const auto& p : params) {
            const std::vector<std::size_t> coords{0, p.tensor.numel() / 2, p.tensor.numel() - 1};
            worst = std::max(worst, grad_check_param(f, p.tensor, h, coords));
        }
        record(name, worst);
    };

    for (int s = 0; s < kInstances; ++s) {
        Rng rng(1000 + s);
        const std::size_t b = 2 + rng.below(4);
        const auto labels = random_labels(b, rng);
        const double eps = rng.uniform(0.0, 0.5);
        const Tensor logits = random_tensor({b, 3}, rng, -2, 2);
        record("classification", grad_check([&](const Tensor& z) { return classification_loss(softmax_rows(z), labels, eps); },
                                            logits, 1e-5));

        std::vector<std::size_t> errors;
        for (std::size_t i = 0; i < b; ++i)
            if (rng.bernoulli(0.4)) errors.push_back(i);
        auto ext = labels;
        for (auto m : errors) ext.push_back(labels[m]);
        const auto ps = build_pair_set(labels, errors);
        if (!ps.empty()) {
            const Tensor raw = random_tensor({ext.size(), 4}, rng);
            record("contrastive", grad_check([&](const Tensor& x) {
                                                 return contrastive_loss(l2_normalize_rows(x), ext, ps, 0.1).value;
                                             },
                                             raw, 1e-6));
        }
        const Tensor probs_logits = random_tensor({b, 3}, rng, -2, 2);
        record("weather (probs)", grad_check([&](const Tensor& z) { return weather_loss_from_probs(softmax_rows(z), labels); },
                                             probs_logits, 1e-5));
        const Tensor con = random_tensor({1}, rng, 0, 3), cls = random_tensor({1}, rng, 0, 3);
        const LossWeights w;
        record("total", grad_check([&](const Tensor& c) { return total_loss(c, cls, w); }, con, 1e-6));
        record("total", grad_check([&](const Tensor& c) { return total_loss(con, c, w); }, cls, 1e-6));

        const auto in = gan_instance(2000 + s);
        const auto& bd = *in.bundle;
        std::vector<NamedTensor> g, f, dy, dx, cls_params;
        bd.gen_night_to_day.collect("g", g);
        bd.gen_day_to_night.collect("f", f);
        bd.disc_day.collect("dy", dy);
        bd.disc_night.collect("dx", dx);
        auto gf = g;
        gf.insert(gf.end(), f.begin(), f.end());
        params_check("adversarial (generator)",
                     [&] { return generator_adversarial_loss(bd.disc_day, map_ref(bd.gen_night_to_day, in.batch.night)); },
                     g, 1e-6);
        params_check("adversarial (discriminator)",
                     [&] {
                         return discriminator_loss(bd.disc_day, in.batch.day, map_ref(bd.gen_night_to_day, in.batch.night));
                     },
                     dy, 1e-5);
        params_check("cycle", [&] { return cycle_loss(bd.gen_night_to_day, bd.gen_day_to_night, in.batch.night, in.batch.day); },
                     gf, 1e-6);
        params_check("identity",
                     [&] { return identity_loss(bd.gen_night_to_day, bd.gen_day_to_night, in.batch.night, in.batch.day); },
                     gf, 1e-6);
        params_check("weather", [&] { return weather_loss(bd, in.members); }, g, 1e-6);
        ErrorSet es;
        es.members = in.members;
        const auto mode = PipelineConfig{}.identity_mode;
        params_check("cyclegan composite",
                     [&] { return cyclegan_total(bd, in.batch, LossWeights{}, es, mode).generator_objective; }, gf, 1e-6);
        auto dd = dy;
        dd.insert(dd.end(), dx.begin(), dx.end());
        params_check("cyclegan composite (discriminators)",
                     [&] { return cyclegan_total(bd, in.batch, LossWeights{}, es).discriminator_objective; }, dd, 1e-5);
    }
    const double secs = seconds_since(t0);
    v.require(secs < 60.0, "runtime " + fmt("%.1f s", secs));
    if (v.pass) v.detail = "max rel err " + fmt("%.2e", worst_overall) + ", " + fmt("%.1f s", secs);
    return v;
}

Verdict oracle_suite() {
    Verdict v;
    double worst = 0;
    auto close = [&](const std::string& name, double got, double want, double tol) {
        worst = std::max(worst, tol == 1e-10 ? std::abs(got - want) : 0.0);
        v.require(std::abs(got - want) < tol, name + ": " + fmt("%.15g", got) + " vs " + fmt("%.15g", want));
    };

    // hand examples
    {
        const std::vector<WC> y{WC::NoPrecipitation};
        const double got = classification_loss(Tensor({1, 3}, {0.7, 0.2, 0.1}), y, 0.1).item();
        close("classification example", got, 0.4633, 5e-4);
        const Tensor e({2, 2}, {0.6, 0.8, 0.6, 0.8});
        const std::vector<WC> l{WC::Rain, WC::Rain};
        close("contrastive example", contrastive_loss(e, l, PairSet{{{0, 1, PairKind::SameClass}}}, 0.1).value.item(),
              4.54e-5, 1e-6);
        const std::vector<WC> wl{WC::Rain, WC::Snow};
        close("weather example", weather_loss_from_probs(Tensor({2, 3}, {0.25, 0.5, 0.25, 0.5, 0.25, 0.25}), wl).item(),
              1.0397, 5e-4);
        close("total example", total_loss(Tensor::scalar(0.4633), Tensor::scalar(0.6931), LossWeights{}).item(), 0.80985,
              1e-10);
    }

    for (int s = 0; s < 10; ++s) {
        Rng rng(3000 + s);
        const std::size_t b = 1 + rng.below(6);
        const auto labels = random_labels(b, rng);
        const double eps = rng.uniform(0.0, 0.9);
        const Tensor p = random_probs(b, rng);
        close("classification", classification_loss(p, labels, eps).item(), classification_ref(p, labels, eps), 1e-10);
        close("weather", weather_loss_from_probs(p, labels).item(), classification_ref(p, labels, 0.0), 1e-10);

        std::vector<std::size_t> errors;
        for (std::size_t i = 0; i < b; ++i)
            if (rng.bernoulli(0.4)) errors.push_back(i);
        auto ext = labels;
        for (auto m : errors) ext.push_back(labels[m]);
        const auto ps = build_pair_set(labels, errors);
        if (!ps.empty()) {
            const Tensor e = unit_rows(ext.size(), 5, rng);
            close("contrastive", contrastive_loss(e, ext, ps, 0.1).value.item(), contrastive_ref(e, ext, ps, 0.1), 1e-10);
        }

        const auto in = gan_instance(4000 + s);
        const auto& bd = *in.bundle;
        const auto fake_day = map_ref(bd.gen_night_to_day, in.batch.night);
        const auto fake_night = map_ref(bd.gen_day_to_night, in.batch.day);
        const auto adv = adversarial_loss(bd.disc_day, in.batch.day, fake_day);
        const double adv_g = -mean_log_ref(bd.disc_day, fake_day, false);
        const double adv_f = -mean_log_ref(bd.disc_night, fake_night, false);
        close("adversarial (generator)", adv.gen_loss.item(), adv_g, 1e-10);
        close("adversarial (discriminator)", adv.disc_loss.item(),
              -mean_log_ref(bd.disc_day, in.batch.day, false) - mean_log_ref(bd.disc_day, fake_day, true), 1e-10);
        const double cyc = batch_l1_ref(map_ref(bd.gen_day_to_night, fake_day), in.batch.night) +
                           batch_l1_ref(map_ref(bd.gen_night_to_day, fake_night), in.batch.day);
        close("cycle", cycle_loss(bd.gen_night_to_day, bd.gen_day_to_night, in.batch.night, in.batch.day).item(), cyc,
              1e-10);
        const double id = batch_l1_ref(fake_day, in.batch.night) + batch_l1_ref(fake_night, in.batch.day);
        close("identity", identity_loss(bd.gen_night_to_day, bd.gen_day_to_night, in.batch.night, in.batch.day).item(), id,
              1e-10);
        // G on day images, F on night images
        const double id_target = batch_l1_ref(map_ref(bd.gen_night_to_day, in.batch.day), in.batch.day) +
                                 batch_l1_ref(map_ref(bd.gen_day_to_night, in.batch.night), in.batch.night);
        const double wea = weather_ref(bd, in.members);
        close("weather (bundle)", weather_loss(bd, in.members).item(), wea, 1e-10);
        ErrorSet es;
        es.members = in.members;
        const LossWeights w;
        for (auto mode : {IdentityMode::SourceDomain, IdentityMode::TargetDomain}) {
            const double idm = mode == IdentityMode::SourceDomain ? id : id_target;
            close("cyclegan composite", cyclegan_total(bd, in.batch, w, es, mode).generator_objective.item(),
                  adv_g + adv_f + w.lambda_cyc * cyc + w.lambda_id * idm + w.lambda_weather * wea, 1e-10);
        }
        const auto total = cyclegan_total(bd, in.batch, w, es);
        const double disc = -mean_log_ref(bd.disc_day, in.batch.day, false) - mean_log_ref(bd.disc_day, fake_day, true) -
                            mean_log_ref(bd.disc_night, in.batch.night, false) -
                            mean_log_ref(bd.disc_night, fake_night, true);
        close("cyclegan composite (discriminators)", total.discriminator_objective.item(), disc, 1e-10);
        const double c1 = rng.uniform(0, 5), c2 = rng.uniform(0, 5);
        close("total", total_loss(Tensor::scalar(c1), Tensor::scalar(c2), w).item(), w.lambda_con * c1 + w.lambda_cls * c2,
              1e-10);
    }
    if (v.pass) v.detail = "max abs diff " + fmt("%.2e", worst);
    return v;
}

Verdict smoothing_identity() {
    Verdict v;
    const double third = 1.0 / 3.0;
    const Tensor p({2, 3}, {third, third, third, third, third, third});
    const std::vector<WC> y{WC::Rain, WC::NoPrecipitation};
    double worst = 0;
    for (double eps : {0.0, 0.1, 0.5}) {
        const double d = std::abs(classification_loss(p, y, eps).item() - std::log(3.0));
        worst = std::max(worst, d);
        v.require(d <= 1e-12, "eps " + fmt("%.1f", eps) + " off by " + fmt("%.2e", d));
    }
    if (v.pass) v.detail = "max |L - ln 3| " + fmt("%.2e", worst);
    return v;
}

Verdict pair_set_enumeration() {
    Verdict v;
    const auto t0 = clock_type::now();
    std::size_t cases = 0;
    for (std::size_t n = 1; n <= 6 && v.pass; ++n) {
        std::size_t combos = 1;
        for (std::size_t i = 0; i < n; ++i) combos *= 3;
        for (std::size_t code = 0; code < combos && v.pass; ++code) {
            std::vector<WC> labels(n);
            for (std::size_t i = 0, c = code; i < n; ++i, c /= 3) labels[i] = static_cast<WC>(c % 3);
            for (std::size_t mask = 0; mask < (1u << n); ++mask) {
                std::vector<std::size_t> errors;
                for (std::size_t i = 0; i < n; ++i)
                    if (mask >> i & 1u) errors.push_back(i);
                std::set<std::tuple<std::size_t, std::size_t, int>> want, got;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = i + 1; j < n; ++j)
                        if (labels[i] == labels[j]) want.insert({i, j, 0});
                for (std::size_t k = 0; k < errors.size(); ++k) want.insert({errors[k], n + k, 1});
                const auto ps = build_pair_set(labels, errors);
                for (const auto& p : ps.pairs) got.insert({p.i, p.j, p.kind == PairKind::Translated ? 1 : 0});
                ++cases;
                if (got != want || ps.size() != want.size()) {
                    v.require(false, "mismatch at n=" + std::to_string(n) + " code=" + std::to_string(code) +
                                         " mask=" + std::to_string(mask));
                    break;
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    v.require(secs < 10.0, "runtime " + fmt("%.1f s", secs));
    if (v.pass) v.detail = std::to_string(cases) + " cases, " + fmt("%.2f s", secs);
    return v;
}

Verdict formatting_fixtures() {
    Verdict v;
    MetricsReport r;
    r.overall = {96.55, 96.80, 96.65};
    r.by_domain[0] = Scores{97.21, 97.45, 97.33};
    r.by_domain[1] = Scores{63.40, 62.10, 62.70};
    const auto md = render_report(r, ReportFormat::Markdown, "baseline");
    v.require(md.find("| baseline | 96.55 | 97.21 | 63.40 | 96.80 | 97.45 | 62.10 | 96.65 | 97.33 | 62.70 |") !=
                  std::string::npos,
              "baseline row not reproduced");

    // night stratum before / after, {accuracy, precision, f1}
    struct Fixture {
        Scores before, after;
        const char* row;
    };
    const Fixture fixtures[] = {
        {{63.40, 62.10, 62.70}, {82.45, 82.10, 82.26},
         "| Night | 63.40 | 82.45 | +19.05 | 62.10 | 82.10 | +20.00 | 62.70 | 82.26 | +19.56 |"},
        {{67.00, 66.00, 66.50}, {81.00, 80.50, 80.75},
         "| Night | 67.00 | 81.00 | +14.00 | 66.00 | 80.50 | +14.50 | 66.50 | 80.75 | +14.25 |"},
        {{52.50, 63.54, 59.96}, {54.20, 61.42, 59.96},
         "| Night | 52.50 | 54.20 | +1.70 | 63.54 | 61.42 | -2.12 | 59.96 | 59.96 | 0.00 |"},
    };
    for (const auto& f : fixtures) {
        MetricsReport a, b;
        a.overall = f.before;
        b.overall = f.after;
        a.by_domain[1] = f.before;
        b.by_domain[1] = f.after;
        const auto table = render_diff_table(diff_reports(a, b));
        v.require(table.find(f.row) != std::string::npos, std::string("missing row ") + f.row);
    }
    if (v.pass) v.detail = "baseline row and +19.05 / +14.00 / +1.70 diff rows reproduced";
    return v;
}

Verdict codec() {
    Verdict v;
    Rng rng(5000);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t h = 1 + rng.below(20), w = 1 + rng.below(20);
        const Tensor img = random_tensor({3, h, w}, rng);
        const Tensor back = decode_ppm(encode_ppm(img));
        for (std::size_t k = 0; k < img.numel(); ++k) worst = std::max(worst, std::abs(img[k] - back[k]));
    }
    v.require(worst <= 1.0 / 127.5, "round-trip error " + fmt("%.3e", worst));

    const std::string good = encode_ppm(random_tensor({3, 4, 4}, rng));
    const std::vector<std::pair<std::string, std::string>> corpus{
        {"truncated", good.substr(0, good.size() - 5)},
        {"truncated header", "P6\n4 4\n"},
        {"bad magic", "P5\n4 4\n255\n" + std::string(16, '\0')},
        {"text magic", "P3\n1 1\n255\n0 0 0\n"},
        {"overflow dims", "P6\n99999999999999999999 1\n255\n"},
        {"huge dims", "P6\n4000000000 4000000000\n255\n"},
        {"zero dims", "P6\n0 4\n255\n"},
        {"bad maxval", "P6\n1 1\n65535\n" + std::string(6, '\0')},
        {"empty", ""},
    };
    for (const auto& [name, bytes] : corpus) {
        bool rejected = false;
        try {
            decode_ppm(bytes);
        } catch (const FormatError&) {
            rejected = true;
        } catch (const std::exception&) {
        }
        v.require(rejected, name + " not rejected with a format error");
    }
    if (v.pass) v.detail = "max round-trip err " + fmt("%.3e", worst) + ", " + std::to_string(corpus.size()) + " malformed files rejected";
    return v;
}

// ---------------------------------------------------------------- criteria 5-8

PipelineConfig acceptance_config() {
    PipelineConfig cfg;  // defaults throughout
    cfg.dataset.counts = {100, 20, 20};
    return cfg;
}

struct FullRun {
    PipelineResult result;
    std::vector<LabeledImage> test;
    double seconds = 0;
};

FullRun full_run(const fs::path& work, const std::string& run_id) {
    auto cfg = acceptance_config();
    cfg.run_id = run_id;
    const auto t0 = clock_type::now();
    fs::path manifest = work / "data" / "manifest.csv";
    if (!fs::exists(manifest)) manifest = generate_dataset(cfg.dataset, work / "data");
    FullRun out;
    out.result = run_pipeline(cfg, manifest, work / "runs", &std::cerr);
    out.seconds = seconds_since(t0);
    out.test = load_split(load_manifest(manifest), Split::Test, cfg.dataset.image_size);
    return out;
}

double acc(const MetricsReport& r, Domain d) { return r.domain(d) ? r.domain(d)->accuracy : NAN; }

Verdict directional(const FullRun& run) {
    Verdict v;
    const auto& r = run.result;
    const double bd = acc(r.before, Domain::Day), bn = acc(r.before, Domain::Night);
    const double ad = acc(r.after, Domain::Day), an = acc(r.after, Domain::Night);
    v.require(run.seconds <= 900.0, "runtime " + fmt("%.0f s", run.seconds) + " exceeds 900 s");
    v.require(bd - bn >= 10.0, "(a) before gap " + fmt("%.2f", bd - bn) + " < 10");
    v.require(an - bn >= 10.0, "(b) night gain " + fmt("%.2f", an - bn) + " < 10");
    v.require(ad - an < bd - bn, "(c) gap did not narrow");
    v.detail = (v.detail.empty() ? "" : v.detail + "; ") + "before day/night " + fmt("%.2f", bd) + "/" + fmt("%.2f", bn) +
               ", after " + fmt("%.2f", ad) + "/" + fmt("%.2f", an) + ", gap " + fmt("%.2f", bd - bn) + " -> " +
               fmt("%.2f", ad - an) + ", " + fmt("%.0f s", run.seconds);
    return v;
}

Verdict weather_preservation(const FullRun& run) {
    Verdict v;
    auto cfg = acceptance_config();
    ModelBundle b(cfg.model, 0);
    auto params = b.parameters();
    assign_checkpoint(params, load_checkpoint(run.result.run_dir / "finetune" / "checkpoint.nsck"));
    std::size_t eligible = 0, kept = 0;
    for (std::size_t i = 0; i < run.test.size(); ++i) {
        const auto& item = run.test[i];
        if (item.domain != Domain::Night) continue;
        // the same scene rendered in daylight
        const Tensor twin = render_scene({item.label, Domain::Day, item.source.seed, cfg.dataset.image_size});
        if (zero_shot_classify(b, twin) != item.label) continue;
        ++eligible;
        kept += run.result.after_predictions[i] == item.label;
    }
    const double rate = eligible ? 100.0 * static_cast<double>(kept) / static_cast<double>(eligible) : 0.0;
    v.require(eligible > 0, "no eligible pairs");
    v.require(rate >= 80.0, fmt("%.2f%%", rate) + " < 80%");
    v.detail = (v.detail.empty() ? "" : v.detail + "; ") + std::to_string(kept) + "/" + std::to_string(eligible) +
               " enhanced night images keep their class (" + fmt("%.2f%%", rate) + ")";
    return v;
}

Verdict cyclegan_sanity(const FullRun& run) {
    Verdict v;
    for (const auto& s : run.result.stages) v.require(s.losses.all_finite(), s.name + " has non-finite losses");
    const auto& gan = run.result.stages[3];
    const auto cyc = gan.losses.column("cycle");
    v.require(cyc.size() >= 2 && cyc.back() < cyc.front(), "cycle loss did not fall");
    v.detail = (v.detail.empty() ? "" : v.detail + "; ") + "cycle loss " + fmt("%.4f", cyc.front()) + " -> " +
               fmt("%.4f", cyc.back()) + " over " + std::to_string(cyc.size()) + " epochs";
    return v;
}

Verdict determinism(const FullRun& first, const FullRun& second) {
    Verdict v;
    std::size_t compared = 0;
    for (const auto& stage : kStageNames) {
        for (const char* file : {"metrics.json", "checkpoint.nsck"}) {
            const fs::path a = first.result.run_dir / std::string(stage) / file;
            const fs::path b = second.result.run_dir / std::string(stage) / file;
            if (fs::exists(a) != fs::exists(b)) {
                v.require(false, a.string() + " present in only one run");
                continue;
            }
            if (!fs::exists(a)) continue;
            ++compared;
            v.require(slurp(a) == slurp(b), std::string(stage) + "/" + file + " differs");
        }
    }
    if (v.pass) v.detail = std::to_string(compared) + " files bitwise identical";
    return v;
}

void print(int n, const Verdict& v, bool& all) {
    all = all && v.pass;
    std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
}

template <class F>
Verdict guarded(F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return Verdict{false, std::string("exception: ") + e.what()};
    }
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "nightshift_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    bool all = true;

    print(1, guarded(gradient_suite), all);
    print(2, guarded(oracle_suite), all);
    print(3, guarded(smoothing_identity), all);
    print(4, guarded(pair_set_enumeration), all);

    std::optional<FullRun> first, second;
    std::string run_error;
    try {
        first = full_run(work, "first");
    } catch (const std::exception& e) {
        run_error = e.what();
    }
    if (first) {
        print(5, guarded([&] { return directional(*first); }), all);
        print(6, guarded([&] { return weather_preservation(*first); }), all);
        print(7, guarded([&] { return cyclegan_sanity(*first); }), all);
        try {
            second = full_run(work, "second");
            print(8, guarded([&] { return determinism(*first, *second); }), all);
        } catch (const std::exception& e) {
            print(8, Verdict{false, std::string("rerun failed: ") + e.what()}, all);
        }
    } else {
        for (int n : {5, 6, 7, 8}) print(n, Verdict{false, "pipeline run failed: " + run_error}, all);
    }

    print(9, guarded(formatting_fixtures), all);
    print(10, guarded(codec), all);
    return all ? 0 : 1;
}
