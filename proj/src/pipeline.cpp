#include "lapanet/pipeline.hpp"

#include "lapanet/cxa.hpp"
#include "lapanet/image_io.hpp"
#include "lapanet/kspace.hpp"
#include "lapanet/lap.hpp"
#include "lapanet/motion.hpp"
#include "lapanet/rng.hpp"
#include "lapanet/sampling.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

namespace lapanet {

using json = nlohmann::json;

std::string to_string(Method m)
{
    return m == Method::lap ? "lap" : "lapanet";
}

Method method_from_string(const std::string& s)
{
    if (s == "lap")
        return Method::lap;
    if (s == "lapanet")
        return Method::lapanet;
    throw ValidationError("unknown method '" + s + "' (expected lap or lapanet)");
}

namespace {

std::string format_r(double R)
{
    std::ostringstream os;
    os << std::setprecision(6) << R;
    return os.str();
}

std::ofstream open_out(const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os)
        throw RuntimeFailure("cannot write " + path.string());
    os << std::setprecision(10);
    return os;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

uint64_t pair_seed(const ExperimentConfig& cfg, int fix, int mov)
{
    return mix_seed(cfg.seed, 0x9a1 + static_cast<uint64_t>(fix), static_cast<uint64_t>(mov));
}

template <class T>
T get_or(const json& j, const char* key, T fallback)
{
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw ValidationError("config: unknown key '" + key + "' in " + where);
}

std::vector<PatternKind> parse_trajectories(const json& j)
{
    std::vector<PatternKind> out;
    for (const auto& v : j)
        out.push_back(pattern_kind_from_string(v.get<std::string>()));
    return out;
}

json trajectories_json(const std::vector<PatternKind>& v)
{
    json j = json::array();
    for (PatternKind k : v)
        j.push_back(to_string(k));
    return j;
}

TrainConfig parse_train(const json& j, TrainConfig t)
{
    reject_unknown(j,
                   {"batch", "lr", "lr_min", "weight_decay", "beta1", "beta2", "adam_eps", "curriculum", "accelerations",
                    "trajectories", "width_multiplier", "combine_add", "use_dfm", "alpha", "beta", "gamma"},
                   "train");
    t.batch = get_or(j, "batch", t.batch);
    t.lr = get_or(j, "lr", t.lr);
    t.lr_min = get_or(j, "lr_min", t.lr_min);
    t.weight_decay = get_or(j, "weight_decay", t.weight_decay);
    t.beta1 = get_or(j, "beta1", t.beta1);
    t.beta2 = get_or(j, "beta2", t.beta2);
    t.adam_eps = get_or(j, "adam_eps", t.adam_eps);
    t.model.width_multiplier = get_or(j, "width_multiplier", t.model.width_multiplier);
    t.model.combine_add = get_or(j, "combine_add", t.model.combine_add);
    t.model.use_dfm = get_or(j, "use_dfm", t.model.use_dfm);
    t.weights.alpha = get_or(j, "alpha", t.weights.alpha);
    t.weights.beta = get_or(j, "beta", t.weights.beta);
    t.weights.gamma = get_or(j, "gamma", t.weights.gamma);
    if (j.contains("accelerations"))
        t.accelerations = j.at("accelerations").get<std::vector<double>>();
    if (j.contains("trajectories"))
        t.trajectories = parse_trajectories(j.at("trajectories"));
    if (j.contains("curriculum")) {
        t.curriculum.clear();
        for (const auto& s : j.at("curriculum")) {
            reject_unknown(s, {"scene", "steps", "max_shift"}, "curriculum stage");
            CurriculumStage st;
            st.scene = scene_kind_from_string(s.at("scene").get<std::string>());
            st.steps = s.at("steps").get<int>();
            st.max_shift = get_or(s, "max_shift", st.max_shift);
            t.curriculum.push_back(st);
        }
    }
    return t;
}

} // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const
{
    if (rows < 8 || cols < 8)
        throw ValidationError("config: rows and cols must be at least 8");
    if (n_frames < 2)
        throw ValidationError("config: n_frames must be at least 2");
    if (n_coils < 1)
        throw ValidationError("config: n_coils must be at least 1");
    if (!(spacing_mm > 0.0))
        throw ValidationError("config: spacing_mm must be positive");
    if (!(max_shift >= 0.0))
        throw ValidationError("config: max_shift must be non-negative");
    if (accelerations.empty())
        throw ValidationError("config: acceleration list is empty");
    if (trajectories.empty())
        throw ValidationError("config: trajectory list is empty");
    for (double r : accelerations)
        if (!(r >= 1.0))
            throw ValidationError("config: accelerations must be >= 1");
    if (ig_steps < 1)
        throw ValidationError("config: ig_steps must be at least 1");
    for (const auto& [f, m] : pairs)
        if (f < 0 || m < 0 || (scene == SceneKind::phantom && (f >= n_frames || m >= n_frames)))
            throw ValidationError("config: pair (" + std::to_string(f) + ", " + std::to_string(m) + ") is out of range");
}

void ExperimentConfig::require_grid(PatternKind kind, double R) const
{
    bool r_ok = false;
    for (double a : accelerations)
        r_ok = r_ok || std::abs(a - R) < 1e-9;
    if (!r_ok)
        throw ValidationError("acceleration R=" + format_r(R) + " is not in the configured grid");
    bool k_ok = false;
    for (PatternKind k : trajectories)
        k_ok = k_ok || k == kind;
    if (!k_ok)
        throw ValidationError("trajectory " + to_string(kind) + " is not in the configured grid");
}

ExperimentConfig parse_experiment_config(const std::string& text)
{
    ExperimentConfig c;
    try {
        const json j = json::parse(text);
        if (!j.is_object())
            throw ValidationError("config: top level must be an object");
        reject_unknown(j,
                       {"rows", "cols", "n_frames", "n_coils", "spacing_mm", "scene", "max_shift", "pairs",
                        "trajectories", "accelerations", "method", "checkpoint", "ig_steps", "seed", "train"},
                       "config");
        c.rows = get_or(j, "rows", c.rows);
        c.cols = get_or(j, "cols", c.cols);
        c.n_frames = get_or(j, "n_frames", c.n_frames);
        c.n_coils = get_or(j, "n_coils", c.n_coils);
        c.spacing_mm = get_or(j, "spacing_mm", c.spacing_mm);
        if (j.contains("scene"))
            c.scene = scene_kind_from_string(j.at("scene").get<std::string>());
        c.max_shift = get_or(j, "max_shift", c.max_shift);
        if (j.contains("pairs")) {
            c.pairs.clear();
            for (const auto& p : j.at("pairs")) {
                if (!p.is_array() || p.size() != 2)
                    throw ValidationError("config: each pair must be [fix, mov]");
                c.pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
            }
        }
        if (j.contains("trajectories"))
            c.trajectories = parse_trajectories(j.at("trajectories"));
        if (j.contains("accelerations"))
            c.accelerations = j.at("accelerations").get<std::vector<double>>();
        if (j.contains("method"))
            c.method = method_from_string(j.at("method").get<std::string>());
        if (j.contains("checkpoint"))
            c.checkpoint = j.at("checkpoint").get<std::string>();
        c.ig_steps = get_or(j, "ig_steps", c.ig_steps);
        c.seed = get_or(j, "seed", c.seed);
        if (j.contains("train"))
            c.train = parse_train(j.at("train"), c.train);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.train.model.height = c.rows;
    c.train.model.width = c.cols;
    c.train.model.n_coils = c.n_coils;
    c.train.seed = c.seed;
    c.validate();
    return c;
}

ExperimentConfig read_experiment_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw ValidationError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_experiment_config(ss.str());
}

std::string experiment_config_json(const ExperimentConfig& c)
{
    json j;
    j["rows"] = c.rows;
    j["cols"] = c.cols;
    j["n_frames"] = c.n_frames;
    j["n_coils"] = c.n_coils;
    j["spacing_mm"] = c.spacing_mm;
    j["scene"] = to_string(c.scene);
    j["max_shift"] = c.max_shift;
    j["pairs"] = json::array();
    for (const auto& [f, m] : c.pairs)
        j["pairs"].push_back({f, m});
    j["trajectories"] = trajectories_json(c.trajectories);
    j["accelerations"] = c.accelerations;
    j["method"] = to_string(c.method);
    j["checkpoint"] = c.checkpoint.string();
    j["ig_steps"] = c.ig_steps;
    j["seed"] = c.seed;
    const TrainConfig& t = c.train;
    json tr;
    tr["batch"] = t.batch;
    tr["lr"] = t.lr;
    tr["lr_min"] = t.lr_min;
    tr["weight_decay"] = t.weight_decay;
    tr["beta1"] = t.beta1;
    tr["beta2"] = t.beta2;
    tr["adam_eps"] = t.adam_eps;
    tr["width_multiplier"] = t.model.width_multiplier;
    tr["combine_add"] = t.model.combine_add;
    tr["use_dfm"] = t.model.use_dfm;
    tr["alpha"] = t.weights.alpha;
    tr["beta"] = t.weights.beta;
    tr["gamma"] = t.weights.gamma;
    tr["accelerations"] = t.accelerations;
    tr["trajectories"] = trajectories_json(t.trajectories);
    tr["curriculum"] = json::array();
    for (const auto& s : t.curriculum)
        tr["curriculum"].push_back({{"scene", to_string(s.scene)}, {"steps", s.steps}, {"max_shift", s.max_shift}});
    j["train"] = tr;
    return j.dump(2);
}

MotionPair experiment_pair(const ExperimentConfig& cfg, int fix, int mov)
{
    if (fix < 0 || mov < 0)
        throw ValidationError("pair indices must be non-negative");
    if (cfg.scene != SceneKind::phantom)
        return make_training_pair(cfg.scene, cfg.rows, cfg.cols, cfg.max_shift, pair_seed(cfg, fix, mov));
    if (fix >= cfg.n_frames || mov >= cfg.n_frames)
        throw ValidationError("pair (" + std::to_string(fix) + ", " + std::to_string(mov) + ") exceeds the "
                              + std::to_string(cfg.n_frames) + " frames of the scene");
    const PhantomScene scene = phantom_cine(PhantomConfig::random(cfg.rows, cfg.cols, cfg.seed), cfg.n_frames);
    return scene_pair(scene, fix, mov);
}

// ---------------------------------------------------------------- phantom and undersampling

PhantomOutput cmd_phantom(const ExperimentConfig& cfg, const std::filesystem::path& out)
{
    cfg.validate();
    const PhantomScene scene = phantom_cine(PhantomConfig::random(cfg.rows, cfg.cols, cfg.seed), cfg.n_frames);
    std::filesystem::create_directories(out);
    PhantomOutput o;
    std::ofstream index = open_out(out / "scene.csv");
    index << "kind,fix,mov,file\n";
    for (int t = 0; t < scene.frame_count(); ++t) {
        const auto frame = out / ("frame_" + std::to_string(t) + ".cxa");
        const auto mask = out / ("mask_" + std::to_string(t) + ".cxa");
        const auto preview = out / ("frame_" + std::to_string(t) + ".pgm");
        write_cxa(frame, to_cxa(scene.frames[size_t(t)]));
        write_cxa(mask, to_cxa(scene.masks[size_t(t)]));
        write_pgm(preview, scene.frames[size_t(t)].abs(), "frame " + std::to_string(t));
        index << "frame," << t << ',' << t << ',' << frame.filename().string() << '\n';
        index << "mask," << t << ',' << t << ',' << mask.filename().string() << '\n';
        o.frames.push_back(frame);
        o.masks.push_back(mask);
        o.previews.push_back(preview);
    }
    for (int f = 0; f < scene.frame_count(); ++f)
        for (int m = 0; m < scene.frame_count(); ++m) {
            if (f == m)
                continue;
            const auto field = out / ("field_" + std::to_string(f) + "_" + std::to_string(m) + ".cxa");
            write_cxa(field, to_cxa(scene.field(f, m)));
            index << "field," << f << ',' << m << ',' << field.filename().string() << '\n';
            o.fields.push_back(field);
        }
    return o;
}

std::vector<std::filesystem::path> cmd_undersample(const ExperimentConfig& cfg, PatternKind kind, double R,
                                                   const std::filesystem::path& out)
{
    cfg.validate();
    cfg.require_grid(kind, R);
    const PhantomScene scene = phantom_cine(PhantomConfig::random(cfg.rows, cfg.cols, cfg.seed), cfg.n_frames);
    const CoilSensitivityMap maps = synthetic_coil_maps(cfg.n_coils, cfg.rows, cfg.cols);
    std::filesystem::create_directories(out);
    std::vector<std::filesystem::path> files;
    std::vector<SamplingPattern> patterns;
    const std::string tag = to_string(kind) + "_R" + format_r(R);
    for (int t = 0; t < scene.frame_count(); ++t) {
        const SamplingPattern p = pattern_for_acceleration(kind, cfg.rows, R, cfg.seed, t);
        const MultiCoil k = undersample_kspace(fft2_centered(coil_images(scene.frames[size_t(t)], maps)), p);
        const auto file = out / ("kspace_" + std::to_string(t) + "_" + tag + ".cxa");
        write_cxa(file, to_cxa(k));
        const auto preview = out / ("zerofilled_" + std::to_string(t) + "_" + tag + ".pgm");
        write_pgm(preview, multicoil_adjoint(k, maps).abs(), "zero-filled " + tag);
        files.push_back(file);
        files.push_back(preview);
        patterns.push_back(p);
    }
    const auto pfile = out / ("patterns_" + tag + ".csv");
    std::ofstream os = open_out(pfile);
    write_patterns_csv(os, patterns);
    files.push_back(pfile);
    return files;
}

// ---------------------------------------------------------------- registration

void write_register_header(std::ostream& os)
{
    os << "scene,method,trajectory,R,fix,mov,status,nrmse_before,nrmse,dsc_myocardium,dsc_cavity,dsc_rv,"
          "hdd_myocardium_mm,hdd_cavity_mm,hdd_rv_mm,dsc_mean,hdd_mean_mm,epe_box_px\n";
}

void write_register_row(std::ostream& os, const RegisterRow& r)
{
    const auto old = os.precision(10);
    os << r.scene << ',' << to_string(r.method) << ',' << to_string(r.trajectory) << ',' << format_r(r.R) << ',' << r.fix
       << ',' << r.mov << ',' << r.status << ',' << r.nrmse_before << ',' << r.eval.nrmse;
    for (double d : r.eval.dsc)
        os << ',' << d;
    for (double h : r.eval.hdd_mm)
        os << ',' << h;
    os << ',' << r.eval.mean_dsc() << ',' << r.eval.mean_hdd() << ',' << r.epe << '\n';
    os.precision(old);
}

nn::LapaNet& ModelCache::get(const std::filesystem::path& dir)
{
    const std::string key = std::filesystem::absolute(dir).lexically_normal().string();
    auto it = models_.find(key);
    if (it == models_.end())
        it = models_.emplace(key, std::make_unique<nn::LapaNet>(load_checkpoint(dir))).first;
    return *it->second;
}

RegisterRow cmd_register(const ExperimentConfig& cfg, Method method, int fix, int mov, PatternKind kind, double R,
                         const std::filesystem::path& out, ModelCache* cache)
{
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    cfg.require_grid(kind, R);
    if (method == Method::lapanet && cfg.checkpoint.empty())
        throw ValidationError("register: method lapanet needs a checkpoint");
    if (method == Method::lapanet && !std::filesystem::exists(cfg.checkpoint / "model.cfg"))
        throw ValidationError("register: missing checkpoint " + cfg.checkpoint.string());

    const MotionPair pair = experiment_pair(cfg, fix, mov);
    const CoilSensitivityMap maps = synthetic_coil_maps(cfg.n_coils, cfg.rows, cfg.cols);
    const UndersampledPair us = undersample_pair(pair, maps, kind, R, pair_seed(cfg, fix, mov));

    RegisterRow row;
    row.scene = to_string(cfg.scene);
    row.method = method;
    row.trajectory = kind;
    row.R = R;
    row.fix = fix;
    row.mov = mov;
    row.nrmse_before = nrmse(pair.fixed, pair.moving);

    DisplacementField u(cfg.rows, cfg.cols);
    bool ok = true;
    if (method == Method::lap) {
        try {
            const LapResult r = lap_register_images(multicoil_adjoint(us.k_fix, maps), multicoil_adjoint(us.k_mov, maps),
                                                    LapSchedule::standard(cfg.rows, cfg.cols));
            u = r.u;
        } catch (const RuntimeFailure& e) {
            ok = false;
            row.status = std::string("insufficient signal: ") + e.what();
            for (char& ch : row.status)
                if (ch == ',' || ch == '\n')
                    ch = ';';
        }
    } else {
        ModelCache local;
        nn::LapaNet& net = (cache ? *cache : local).get(cfg.checkpoint);
        const auto& mc = net.config();
        if (mc.height != cfg.rows || mc.width != cfg.cols || mc.n_coils != cfg.n_coils)
            throw ValidationError("register: checkpoint expects " + std::to_string(mc.height) + "x"
                                  + std::to_string(mc.width) + " with " + std::to_string(mc.n_coils) + " coils");
        u = network_register(net, nn::prepare_input(us.k_fix, us.k_mov)).u;
    }

    if (ok) {
        row.eval = evaluate_registration(pair.fixed, pair.moving, pair.fixed_labels, pair.moving_labels, u, cfg.spacing_mm);
        const Mask box = box_mask(pair.fixed_labels, 10);
        const RGrid epe = endpoint_error(u, pair.truth);
        double s = 0.0, n = 0.0;
        for (Eigen::Index i = 0; i < epe.size(); ++i)
            if (box.data()[i]) {
                s += epe.data()[i];
                n += 1.0;
            }
        row.epe = n > 0.0 ? s / n : 0.0;
    } else {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.eval.nrmse = row.epe = nan;
        row.eval.dsc.fill(nan);
        row.eval.hdd_mm.fill(nan);
    }

    if (!out.empty()) {
        std::filesystem::create_directories(out);
        if (ok) {
            write_cxa(out / "field.cxa", to_cxa(u));
            write_pgm(out / "error.pgm", (pair.fixed - warp_bilinear(pair.moving, u)).abs(), "|fixed - warped moving|");
            const double scale = std::max(1.0, std::sqrt((pair.truth.ux.square() + pair.truth.uy.square()).maxCoeff()));
            write_ppm(out / "flow.ppm", flow_to_color(u, scale), "flow color wheel");
        }
        std::ofstream os = open_out(out / "metrics.csv");
        write_register_header(os);
        write_register_row(os, row);
    }
    row.seconds = seconds_since(t0);
    return row;
}

// ---------------------------------------------------------------- sweep

std::vector<SummaryRow> summarize(const std::vector<RegisterRow>& rows)
{
    struct Acc {
        SummaryRow head;
        std::vector<double> nrmse, dsc, hdd, epe;
    };
    std::vector<Acc> groups;
    for (const auto& r : rows) {
        if (r.status != "ok")
            continue;
        auto it = std::find_if(groups.begin(), groups.end(), [&](const Acc& a) {
            return a.head.method == r.method && a.head.trajectory == r.trajectory && a.head.R == r.R;
        });
        if (it == groups.end()) {
            groups.push_back({});
            it = groups.end() - 1;
            it->head.method = r.method;
            it->head.trajectory = r.trajectory;
            it->head.R = r.R;
        }
        it->nrmse.push_back(r.eval.nrmse);
        it->dsc.push_back(r.eval.mean_dsc());
        it->hdd.push_back(r.eval.mean_hdd());
        it->epe.push_back(r.epe);
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        for (double x : v)
            mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v)
            ss += (x - mean) * (x - mean);
        sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    };
    std::vector<SummaryRow> out;
    for (auto& g : groups) {
        SummaryRow s = g.head;
        s.n = static_cast<int>(g.nrmse.size());
        stats(g.nrmse, s.nrmse_mean, s.nrmse_std);
        stats(g.dsc, s.dsc_mean, s.dsc_std);
        stats(g.hdd, s.hdd_mean, s.hdd_std);
        stats(g.epe, s.epe_mean, s.epe_std);
        out.push_back(s);
    }
    return out;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows)
{
    const auto old = os.precision(10);
    os << "method,trajectory,R,n,nrmse_mean,nrmse_std,dsc_mean,dsc_std,hdd_mean_mm,hdd_std_mm,epe_mean_px,epe_std_px\n";
    for (const auto& s : rows)
        os << to_string(s.method) << ',' << to_string(s.trajectory) << ',' << format_r(s.R) << ',' << s.n << ','
           << s.nrmse_mean << ',' << s.nrmse_std << ',' << s.dsc_mean << ',' << s.dsc_std << ',' << s.hdd_mean << ','
           << s.hdd_std << ',' << s.epe_mean << ',' << s.epe_std << '\n';
    os.precision(old);
}

std::vector<RegisterRow> cmd_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out)
{
    cfg.validate();
    if (cfg.pairs.empty())
        throw ValidationError("sweep: the pair list is empty");
    ModelCache cache;
    std::vector<RegisterRow> rows;
    for (PatternKind kind : cfg.trajectories)
        for (double R : cfg.accelerations)
            for (const auto& [f, m] : cfg.pairs)
                rows.push_back(cmd_register(cfg, cfg.method, f, m, kind, R, {}, &cache));
    std::filesystem::create_directories(out);
    {
        std::ofstream os = open_out(out / "sweep.csv");
        write_register_header(os);
        for (const auto& r : rows)
            write_register_row(os, r);
    }
    std::ofstream os = open_out(out / "sweep_summary.csv");
    write_summary_csv(os, summarize(rows));
    return rows;
}

// ---------------------------------------------------------------- training

std::vector<TrainBatch> validation_batches(const TrainConfig& cfg, const CoilSensitivityMap& maps)
{
    TrainConfig v = cfg;
    v.seed = mix_seed(cfg.seed, 0x7a11d);
    std::vector<TrainBatch> out;
    std::vector<SceneKind> seen;
    int first = 0;
    for (const auto& st : cfg.curriculum) {
        if (std::find(seen.begin(), seen.end(), st.scene) == seen.end() && st.steps > 0) {
            seen.push_back(st.scene);
            out.push_back(make_train_batch(v, maps, first));
        }
        first += st.steps;
    }
    return out;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out,
                       const std::function<void(const TrainRow&)>& progress)
{
    cfg.validate();
    TrainConfig t = cfg.train;
    t.model.height = cfg.rows;
    t.model.width = cfg.cols;
    t.model.n_coils = cfg.n_coils;
    t.seed = cfg.seed;
    t.validate();
    std::filesystem::create_directories(out);
    {
        std::ofstream os = open_out(out / "config.json");
        os << experiment_config_json(cfg) << '\n';
    }

    const CoilSensitivityMap maps = synthetic_coil_maps(t.model.n_coils, t.model.height, t.model.width);
    const std::vector<TrainBatch> val = validation_batches(t, maps);
    nn::LapaNet net(t.model, t.seed);
    TrainOutcome o;
    std::vector<double> before, after;
    for (const auto& b : val)
        before.push_back(evaluate_loss(net, b, t.weights));

    const auto t0 = std::chrono::steady_clock::now();
    {
        std::ofstream log = open_out(out / "train.csv");
        o.rows = train(net, t, &log, progress);
    }
    o.seconds = seconds_since(t0);
    for (const auto& b : val)
        after.push_back(evaluate_loss(net, b, t.weights));
    save_checkpoint(out / "checkpoint", net);
    {
        std::ofstream os = open_out(out / "train_time.csv");
        os << "steps,seconds\n" << o.rows.size() << ',' << o.seconds << '\n';
    }

    std::ofstream os = open_out(out / "train_summary.csv");
    os << "batch,scene,loss_before,loss_after,fall_fraction\n";
    for (size_t i = 0; i < val.size(); ++i) {
        os << i << ',' << to_string(val[i].scene) << ',' << before[i] << ',' << after[i] << ','
           << 1.0 - after[i] / before[i] << '\n';
        o.validation_before += before[i];
        o.validation_after += after[i];
    }
    os << "all,all," << o.validation_before << ',' << o.validation_after << ','
       << 1.0 - o.validation_after / o.validation_before << '\n';
    return o;
}

// ---------------------------------------------------------------- interpretability

InterpretOutcome cmd_interpret(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint, int fix, int mov,
                               PatternKind kind, double R, int steps, const std::filesystem::path& out)
{
    cfg.validate();
    cfg.require_grid(kind, R);
    if (steps < 1)
        throw ValidationError("interpret: steps must be at least 1");
    if (!std::filesystem::exists(checkpoint / "model.cfg"))
        throw ValidationError("interpret: missing checkpoint " + checkpoint.string());
    nn::LapaNet net = load_checkpoint(checkpoint);
    const auto& mc = net.config();
    if (mc.height != cfg.rows || mc.width != cfg.cols || mc.n_coils != cfg.n_coils)
        throw ValidationError("interpret: checkpoint shape differs from the config");

    const MotionPair pair = experiment_pair(cfg, fix, mov);
    const CoilSensitivityMap maps = synthetic_coil_maps(cfg.n_coils, cfg.rows, cfg.cols);
    const UndersampledPair us = undersample_pair(pair, maps, kind, R, pair_seed(cfg, fix, mov));

    InterpretOutcome o;
    o.ig = nn::integrated_gradients(net, nn::prepare_input(us.k_fix, us.k_mov), steps);
    o.maps = attribution_maps(o.ig.attribution, cfg.n_coils);
    auto pattern = [](const SamplingPattern& p) {
        return p.is_cartesian() ? std::optional<SamplingPattern>(p) : std::nullopt;
    };
    o.nps_fix = nps_analysis({o.maps.fix}, {pattern(us.pattern_fix)});
    o.nps_mov = nps_analysis({o.maps.mov}, {pattern(us.pattern_mov)});

    std::filesystem::create_directories(out);
    write_cxa(out / "ig_attribution.cxa",
              to_cxa(std::vector<double>(o.ig.attribution.data.data(), o.ig.attribution.data.data() + o.ig.attribution.size()),
                     {uint32_t(o.ig.attribution.n()), uint32_t(o.ig.attribution.c()), uint32_t(o.ig.attribution.h()),
                      uint32_t(o.ig.attribution.w())}));
    write_pgm(out / "ig_fix.pgm", o.maps.fix, "integrated gradients, fixed k-space");
    write_pgm(out / "ig_mov.pgm", o.maps.mov, "integrated gradients, moving k-space");
    auto log_spectrum = [](const RGrid& m) { return (power_spectrum(m) + 1e-30).log10().eval(); };
    write_pgm(out / "spectrum_fix.pgm", log_spectrum(o.maps.fix), "log10 power spectrum, fixed");
    write_pgm(out / "spectrum_mov.pgm", log_spectrum(o.maps.mov), "log10 power spectrum, moving");
    {
        std::ofstream os = open_out(out / "nps.csv");
        write_nps_header(os);
        write_nps_csv(os, o.nps_fix, "fix");
        write_nps_csv(os, o.nps_mov, "mov");
    }
    std::ofstream os = open_out(out / "ig_summary.csv");
    os << "fix,mov,trajectory,R,steps,f_input,f_baseline,attribution_sum,completeness_gap,"
          "low_frequency_fraction_fix,low_frequency_fraction_mov\n";
    os << fix << ',' << mov << ',' << to_string(kind) << ',' << format_r(R) << ',' << steps << ',' << o.ig.f_input << ','
       << o.ig.f_baseline << ',' << o.ig.sum << ',' << o.ig.completeness_gap << ',' << o.nps_fix.low_frequency_fraction
       << ',' << o.nps_mov.low_frequency_fraction << '\n';
    return o;
}

} // namespace lapanet
