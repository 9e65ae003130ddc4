#include "lapanet/lapanet.h"

#include "lapanet/pipeline.hpp"
#include "lapanet/sampling.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <exception>
#include <new>
#include <string>

struct lapanet_config {
    lapanet::ExperimentConfig cfg;
};

struct lapanet_model {
    lapanet::nn::LapaNet net;
};

namespace {

thread_local std::string last_error;

template <class F>
lapanet_status guarded(F&& f)
{
    try {
        f();
        last_error.clear();
        return LAPANET_OK;
    } catch (const lapanet::ValidationError& e) {
        last_error = e.what();
        return LAPANET_VALIDATION_ERROR;
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return LAPANET_RUNTIME_FAILURE;
    } catch (const std::exception& e) {
        last_error = e.what();
        return LAPANET_RUNTIME_FAILURE;
    } catch (...) {
        last_error = "unknown error";
        return LAPANET_RUNTIME_FAILURE;
    }
}

void require(const void* p, const char* what)
{
    if (!p)
        throw lapanet::ValidationError(std::string(what) + " is null");
}

std::string path_or_empty(const char* s)
{
    return s ? std::string(s) : std::string();
}

lapanet::PatternKind trajectory(const char* s)
{
    require(s, "trajectory");
    return lapanet::pattern_kind_from_string(s);
}

} // namespace

extern "C" {

const char* lapanet_last_error(void)
{
    return last_error.c_str();
}

const char* lapanet_version(void)
{
    return "1.0.0";
}

lapanet_status lapanet_config_default(lapanet_config** out)
{
    return guarded([&] {
        require(out, "out");
        *out = new lapanet_config{};
    });
}

lapanet_status lapanet_config_from_json(const char* text, lapanet_config** out)
{
    return guarded([&] {
        require(text, "text");
        require(out, "out");
        *out = new lapanet_config{lapanet::parse_experiment_config(text)};
    });
}

lapanet_status lapanet_config_from_file(const char* path, lapanet_config** out)
{
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new lapanet_config{lapanet::read_experiment_config(path)};
    });
}

void lapanet_config_free(lapanet_config* cfg)
{
    delete cfg;
}

lapanet_status lapanet_config_set_seed(lapanet_config* cfg, uint64_t seed)
{
    return guarded([&] {
        require(cfg, "config");
        cfg->cfg.seed = seed;
        cfg->cfg.train.seed = seed;
    });
}

lapanet_status lapanet_config_set_method(lapanet_config* cfg, const char* method)
{
    return guarded([&] {
        require(cfg, "config");
        require(method, "method");
        cfg->cfg.method = lapanet::method_from_string(method);
    });
}

lapanet_status lapanet_config_set_checkpoint(lapanet_config* cfg, const char* path)
{
    return guarded([&] {
        require(cfg, "config");
        cfg->cfg.checkpoint = path_or_empty(path);
    });
}

lapanet_status lapanet_config_to_json(const lapanet_config* cfg, char* buf, size_t capacity, size_t* needed)
{
    return guarded([&] {
        require(cfg, "config");
        const std::string s = lapanet::experiment_config_json(cfg->cfg);
        if (needed)
            *needed = s.size() + 1;
        if (buf && capacity > 0) {
            const size_t n = std::min(capacity - 1, s.size());
            std::memcpy(buf, s.data(), n);
            buf[n] = '\0';
        }
    });
}

lapanet_status lapanet_phantom(const lapanet_config* cfg, const char* out_dir)
{
    return guarded([&] {
        require(cfg, "config");
        require(out_dir, "out_dir");
        lapanet::cmd_phantom(cfg->cfg, out_dir);
    });
}

lapanet_status lapanet_undersample(const lapanet_config* cfg, const char* traj, double R, const char* out_dir)
{
    return guarded([&] {
        require(cfg, "config");
        require(out_dir, "out_dir");
        lapanet::cmd_undersample(cfg->cfg, trajectory(traj), R, out_dir);
    });
}

lapanet_status lapanet_register(const lapanet_config* cfg, const char* method, int fix, int mov, const char* traj,
                                double R, const char* out_dir, lapanet_register_result* result)
{
    return guarded([&] {
        require(cfg, "config");
        const lapanet::Method m = method ? lapanet::method_from_string(method) : cfg->cfg.method;
        const lapanet::RegisterRow r
            = lapanet::cmd_register(cfg->cfg, m, fix, mov, trajectory(traj), R, path_or_empty(out_dir));
        if (result) {
            result->ok = r.status == "ok";
            result->nrmse_before = r.nrmse_before;
            result->nrmse = r.eval.nrmse;
            for (int i = 0; i < 3; ++i) {
                result->dsc[i] = r.eval.dsc[size_t(i)];
                result->hdd_mm[i] = r.eval.hdd_mm[size_t(i)];
            }
            result->dsc_mean = r.eval.mean_dsc();
            result->hdd_mean_mm = r.eval.mean_hdd();
            result->epe_px = r.epe;
            result->seconds = r.seconds;
        }
    });
}

lapanet_status lapanet_sweep(const lapanet_config* cfg, const char* out_dir, size_t* rows)
{
    return guarded([&] {
        require(cfg, "config");
        require(out_dir, "out_dir");
        const auto r = lapanet::cmd_sweep(cfg->cfg, out_dir);
        if (rows)
            *rows = r.size();
    });
}

lapanet_status lapanet_train(const lapanet_config* cfg, const char* out_dir, lapanet_progress_fn progress, void* user,
                             lapanet_train_result* result)
{
    return guarded([&] {
        require(cfg, "config");
        require(out_dir, "out_dir");
        const int total = cfg->cfg.train.total_steps();
        std::function<void(const lapanet::TrainRow&)> cb;
        if (progress)
            cb = [&](const lapanet::TrainRow& r) { progress(r.step, total, r.total, user); };
        const lapanet::TrainOutcome o = lapanet::cmd_train(cfg->cfg, out_dir, cb);
        if (result) {
            result->steps = static_cast<int>(o.rows.size());
            result->final_loss = o.rows.empty() ? 0.0 : o.rows.back().total;
            result->validation_before = o.validation_before;
            result->validation_after = o.validation_after;
            result->seconds = o.seconds;
        }
    });
}

lapanet_status lapanet_interpret(const lapanet_config* cfg, const char* checkpoint, int fix, int mov, const char* traj,
                                 double R, int steps, const char* out_dir, lapanet_interpret_result* result)
{
    return guarded([&] {
        require(cfg, "config");
        require(out_dir, "out_dir");
        const std::string ckpt = checkpoint ? std::string(checkpoint) : cfg->cfg.checkpoint.string();
        if (ckpt.empty())
            throw lapanet::ValidationError("interpret: no checkpoint given");
        const lapanet::InterpretOutcome o
            = lapanet::cmd_interpret(cfg->cfg, ckpt, fix, mov, trajectory(traj), R, steps > 0 ? steps : cfg->cfg.ig_steps, out_dir);
        if (result) {
            result->f_input = o.ig.f_input;
            result->f_baseline = o.ig.f_baseline;
            result->attribution_sum = o.ig.sum;
            result->completeness_gap = o.ig.completeness_gap;
            result->low_frequency_fraction_fix = o.nps_fix.low_frequency_fraction;
            result->low_frequency_fraction_mov = o.nps_mov.low_frequency_fraction;
        }
    });
}

lapanet_status lapanet_selftest(uint64_t seed, lapanet_line_fn sink, void* user, int* failures)
{
    return guarded([&] {
        int fails = 0;
        for (const auto& l : lapanet::run_selftest(seed)) {
            fails += !l.pass;
            if (sink) {
                const std::string line = std::string(l.pass ? "PASS " : "FAIL ") + l.name + ' ' + l.detail;
                sink(line.c_str(), user);
            }
        }
        if (failures)
            *failures = fails;
    });
}

lapanet_status lapanet_model_load(const char* checkpoint, lapanet_model** out)
{
    return guarded([&] {
        require(checkpoint, "checkpoint");
        require(out, "out");
        *out = new lapanet_model{lapanet::load_checkpoint(checkpoint)};
    });
}

void lapanet_model_free(lapanet_model* model)
{
    delete model;
}

lapanet_status lapanet_model_shape(const lapanet_model* model, int* rows, int* cols, int* n_coils)
{
    return guarded([&] {
        require(model, "model");
        const auto& c = model->net.config();
        if (rows)
            *rows = c.height;
        if (cols)
            *cols = c.width;
        if (n_coils)
            *n_coils = c.n_coils;
    });
}

lapanet_status lapanet_model_parameter_count(const lapanet_model* model, int64_t* count)
{
    return guarded([&] {
        require(model, "model");
        require(count, "count");
        *count = model->net.params().total_count();
    });
}

lapanet_status lapanet_model_register(lapanet_model* model, const double* k_fix, const double* k_mov, double* ux,
                                      double* uy)
{
    return guarded([&] {
        require(model, "model");
        require(k_fix, "k_fix");
        require(k_mov, "k_mov");
        require(ux, "ux");
        require(uy, "uy");
        const auto& c = model->net.config();
        auto unpack = [&](const double* src) {
            lapanet::MultiCoil m(c.n_coils, c.height, c.width);
            for (auto& g : m.coils)
                for (Eigen::Index i = 0; i < g.size(); ++i, src += 2)
                    g.data()[i] = {src[0], src[1]};
            return m;
        };
        const lapanet::NetworkEstimate e
            = lapanet::network_register(model->net, lapanet::nn::prepare_input(unpack(k_fix), unpack(k_mov)));
        std::memcpy(ux, e.u.ux.data(), sizeof(double) * size_t(e.u.ux.size()));
        std::memcpy(uy, e.u.uy.data(), sizeof(double) * size_t(e.u.uy.size()));
    });
}

} // extern "C"
