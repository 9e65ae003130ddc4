#include "lapanet/lapanet.h"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>

namespace {

struct ConfigDeleter {
    void operator()(lapanet_config* c) const { lapanet_config_free(c); }
};
using ConfigPtr = std::unique_ptr<lapanet_config, ConfigDeleter>;

int report(lapanet_status s)
{
    if (s != LAPANET_OK)
        std::cerr << "error: " << lapanet_last_error() << '\n';
    return static_cast<int>(s);
}

std::string join(const std::string& dir, const std::string& name)
{
    return dir.empty() || dir.back() == '/' ? dir + name : dir + '/' + name;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Motion estimation from undersampled cardiac k-space"};
    app.require_subcommand(1);

    uint64_t seed = 1;
    std::string out = "out";
    std::string config_path;
    app.add_option("--seed", seed, "random seed")->capture_default_str();
    app.add_option("--out", out, "output directory")->capture_default_str();
    app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);

    std::string trajectory = "cartesian";
    double R = 1.0;
    int fix = 0, mov = 3, steps = 0;
    std::string method, checkpoint;

    auto* phantom = app.add_subcommand("phantom", "write cine frames, masks and ground-truth fields");

    auto* undersample = app.add_subcommand("undersample", "write undersampled coil k-space for every frame");
    undersample->add_option("--trajectory", trajectory, "cartesian or radial")->capture_default_str();
    undersample->add_option("--R", R, "acceleration factor")->capture_default_str();

    auto* reg = app.add_subcommand("register", "register one pair and score it");
    reg->add_option("--method", method, "lap or lapanet (default from config)");
    reg->add_option("--fix", fix, "fixed frame")->capture_default_str();
    reg->add_option("--mov", mov, "moving frame")->capture_default_str();
    reg->add_option("--trajectory", trajectory, "cartesian or radial")->capture_default_str();
    reg->add_option("--R", R, "acceleration factor")->capture_default_str();
    reg->add_option("--checkpoint", checkpoint, "trained model directory");

    auto* sweep = app.add_subcommand("sweep", "register every pair at every trajectory and acceleration");
    sweep->add_option("--method", method, "lap or lapanet (default from config)");
    sweep->add_option("--checkpoint", checkpoint, "trained model directory");

    auto* train = app.add_subcommand("train", "train the network and save a checkpoint");

    auto* interpret = app.add_subcommand("interpret", "integrated gradients and noise power spectra");
    interpret->add_option("--checkpoint", checkpoint, "trained model directory");
    interpret->add_option("--fix", fix, "fixed frame")->capture_default_str();
    interpret->add_option("--mov", mov, "moving frame")->capture_default_str();
    interpret->add_option("--trajectory", trajectory, "cartesian or radial")->capture_default_str();
    interpret->add_option("--R", R, "acceleration factor")->capture_default_str();
    interpret->add_option("--steps", steps, "integration steps (default from config)");

    auto* selftest = app.add_subcommand("selftest", "run the built-in numerical oracles");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return LAPANET_VALIDATION_ERROR;
    }

    if (selftest->parsed()) {
        int failures = 0;
        const lapanet_status s = lapanet_selftest(
            seed, [](const char* line, void*) { std::cout << line << '\n'; }, nullptr, &failures);
        if (s != LAPANET_OK)
            return report(s);
        return failures == 0 ? 0 : LAPANET_RUNTIME_FAILURE;
    }

    lapanet_config* raw = nullptr;
    lapanet_status s = config_path.empty() ? lapanet_config_default(&raw)
                                           : lapanet_config_from_file(config_path.c_str(), &raw);
    if (s != LAPANET_OK)
        return report(s);
    ConfigPtr cfg(raw);
    if (app.get_option("--seed")->count() > 0 || config_path.empty())
        if ((s = lapanet_config_set_seed(cfg.get(), seed)) != LAPANET_OK)
            return report(s);
    if (!method.empty() && (s = lapanet_config_set_method(cfg.get(), method.c_str())) != LAPANET_OK)
        return report(s);
    if (!checkpoint.empty() && (s = lapanet_config_set_checkpoint(cfg.get(), checkpoint.c_str())) != LAPANET_OK)
        return report(s);

    if (phantom->parsed()) {
        s = lapanet_phantom(cfg.get(), out.c_str());
        if (s == LAPANET_OK)
            std::cout << "wrote phantom to " << out << '\n';
    } else if (undersample->parsed()) {
        s = lapanet_undersample(cfg.get(), trajectory.c_str(), R, out.c_str());
        if (s == LAPANET_OK)
            std::cout << "wrote " << trajectory << " R=" << R << " k-space to " << out << '\n';
    } else if (reg->parsed()) {
        lapanet_register_result r{};
        s = lapanet_register(cfg.get(), nullptr, fix, mov, trajectory.c_str(), R, out.c_str(), &r);
        if (s == LAPANET_OK) {
            if (!r.ok)
                std::cout << "registration reported insufficient signal; see " << join(out, "metrics.csv") << '\n';
            else
                std::printf("nrmse %.4f -> %.4f  dsc %.4f  hdd %.3f mm  epe %.3f px  (%.2f s)\n", r.nrmse_before,
                            r.nrmse, r.dsc_mean, r.hdd_mean_mm, r.epe_px, r.seconds);
        }
    } else if (sweep->parsed()) {
        size_t rows = 0;
        s = lapanet_sweep(cfg.get(), out.c_str(), &rows);
        if (s == LAPANET_OK)
            std::cout << "wrote " << rows << " rows to " << join(out, "sweep.csv") << '\n';
    } else if (train->parsed()) {
        lapanet_train_result r{};
        s = lapanet_train(
            cfg.get(), out.c_str(),
            [](int step, int total, double loss, void*) {
                if (step % 50 == 0 || step + 1 == total)
                    std::printf("step %d/%d loss %.4f\n", step + 1, total, loss);
                std::fflush(stdout);
            },
            nullptr, &r);
        if (s == LAPANET_OK)
            std::printf("validation loss %.4f -> %.4f after %d steps (%.1f s)\n", r.validation_before,
                        r.validation_after, r.steps, r.seconds);
    } else if (interpret->parsed()) {
        lapanet_interpret_result r{};
        s = lapanet_interpret(cfg.get(), checkpoint.empty() ? nullptr : checkpoint.c_str(), fix, mov,
                              trajectory.c_str(), R, steps, out.c_str(), &r);
        if (s == LAPANET_OK)
            std::printf("attribution sum %.6g  f(x)-f(0) %.6g  completeness gap %.3g  low-frequency share %.3f / %.3f\n",
                        r.attribution_sum, r.f_input - r.f_baseline, r.completeness_gap,
                        r.low_frequency_fraction_fix, r.low_frequency_fraction_mov);
    }
    return report(s);
}
