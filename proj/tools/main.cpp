// semf command-line tool: dataset synthesis, spectrogram rendering, training,
// evaluation, and the ablation harness. Every command is deterministic given
// its flags, seed, and input files; errors go to stderr with a stable
// "semf: error:" prefix and a nonzero exit code.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "semf/semf.hpp"

namespace fs = std::filesystem;
using namespace semf;

namespace {

struct CommonOpts {
    std::string data;
    std::string out;
    std::uint64_t seed = 7;
};

struct ModelOpts {
    std::size_t seq_len = 120;
    std::size_t n_scales = 128;
    std::size_t patch_size = 8;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::string image_kind = "morlet";
    std::string exo_encoder = "transformer";
    std::string fusion = "bi";
    double dropout = 0.1;
    bool revin_affine = false;

    std::size_t batch_size = 32;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    double learning_rate = 1e-3;
};

void add_model_flags(CLI::App* cmd, ModelOpts& m) {
    cmd->add_option("--seq-len", m.seq_len, "input window length");
    cmd->add_option("--scales", m.n_scales, "wavelet scale count / image height");
    cmd->add_option("--patch", m.patch_size, "ViT patch size");
    cmd->add_option("--d-model", m.d_model, "embedding width");
    cmd->add_option("--heads", m.n_heads, "attention heads");
    cmd->add_option("--layers", m.n_layers, "encoder layers");
    cmd->add_option("--image", m.image_kind, "image kind: line|stft|cmor|morlet");
    cmd->add_option("--exo-encoder", m.exo_encoder, "exogenous encoder: mlp|transformer");
    cmd->add_option("--fusion", m.fusion, "fusion: single|bi");
    cmd->add_option("--dropout", m.dropout, "dropout probability");
    cmd->add_flag("--revin-affine", m.revin_affine, "learnable RevIN affine");
    cmd->add_option("--batch", m.batch_size, "mini-batch size");
    cmd->add_option("--epochs", m.max_epochs, "max training epochs");
    cmd->add_option("--patience", m.patience, "early-stopping patience");
    cmd->add_option("--lr", m.learning_rate, "Adam learning rate");
}

TrainConfig to_train_config(const ModelOpts& m, std::uint64_t seed) {
    TrainConfig c;
    c.model.seq_len = m.seq_len;
    c.model.n_scales = m.n_scales;
    c.model.patch_size = m.patch_size;
    c.model.d_model = m.d_model;
    c.model.n_heads = m.n_heads;
    c.model.n_layers = m.n_layers;
    c.model.image_kind = image_kind_from(m.image_kind);
    c.model.exo_kind = exo_kind_from(m.exo_encoder);
    c.model.fusion_kind = nn::fusion_kind_from(m.fusion);
    c.model.dropout = m.dropout;
    c.model.revin_affine = m.revin_affine;
    c.seed = seed;
    c.batch_size = m.batch_size;
    c.max_epochs = m.max_epochs;
    c.patience = m.patience;
    c.learning_rate = m.learning_rate;
    return c;
}

// key=value echo; a run is reproducible from this file via --config
std::string config_echo(const std::string& command, const CommonOpts& common, const ModelOpts& m) {
    std::string out;
    out += "command=" + command + "\n";
    if (!common.data.empty()) out += "data=" + common.data + "\n";
    if (!common.out.empty()) out += "out=" + common.out + "\n";
    out += "seed=" + std::to_string(common.seed) + "\n";
    out += "seq-len=" + std::to_string(m.seq_len) + "\n";
    out += "scales=" + std::to_string(m.n_scales) + "\n";
    out += "patch=" + std::to_string(m.patch_size) + "\n";
    out += "d-model=" + std::to_string(m.d_model) + "\n";
    out += "heads=" + std::to_string(m.n_heads) + "\n";
    out += "layers=" + std::to_string(m.n_layers) + "\n";
    out += "image=" + m.image_kind + "\n";
    out += "exo-encoder=" + m.exo_encoder + "\n";
    out += "fusion=" + m.fusion + "\n";
    out += "dropout=" + detail::fmt_g(m.dropout) + "\n";
    out += "revin-affine=" + std::string(m.revin_affine ? "true" : "false") + "\n";
    out += "batch=" + std::to_string(m.batch_size) + "\n";
    out += "epochs=" + std::to_string(m.max_epochs) + "\n";
    out += "patience=" + std::to_string(m.patience) + "\n";
    out += "lr=" + detail::fmt_g(m.learning_rate) + "\n";
    return out;
}

AlignedFrame load_frame(const std::string& path) { return impute(load_csv(path)); }

int run(int argc, char** argv) {
    CLI::App app{"SEMF multimodal multi-horizon forecaster"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read defaults from a key=value file");
    app.allow_config_extras(true);

    CommonOpts common;
    ModelOpts model;

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic dataset CSV");
    std::size_t n_days = 3339;
    synth->add_option("--days", n_days, "number of calendar days");
    synth->add_option("--seed", common.seed, "generator seed");
    synth->add_option("--out", common.out, "output CSV path")->required();

    // render
    auto* render = app.add_subcommand("render", "render one window as a PGM image + CSV sidecar");
    std::size_t index = 0;
    render->add_option("--data", common.data, "input CSV")->required();
    render->add_option("--index", index, "window index");
    render->add_option("--kind", model.image_kind, "image kind: line|stft|cmor|morlet");
    render->add_option("--seq-len", model.seq_len, "window length");
    render->add_option("--scales", model.n_scales, "image height");
    render->add_option("--out", common.out, "output PGM path")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model and evaluate it on the test split");
    train_cmd->add_option("--data", common.data, "input CSV")->required();
    train_cmd->add_option("--out", common.out, "output directory")->required();
    train_cmd->add_option("--seed", common.seed, "training seed");
    add_model_flags(train_cmd, model);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "recompute a metrics report from a checkpoint");
    std::string checkpoint;
    std::string split_name = "test";
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", common.data, "input CSV")->required();
    eval_cmd->add_option("--split", split_name, "split to evaluate: train|val|test");
    eval_cmd->add_option("--out", common.out, "output directory (optional)");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "run one ablation axis");
    std::string axis_name;
    ablate_cmd->add_option("--axis", axis_name, "image|exo_encoder|fusion|patch_scale|seq_len")->required();
    ablate_cmd->add_option("--data", common.data, "input CSV (synthesized when omitted)");
    ablate_cmd->add_option("--out", common.out, "output directory")->required();
    ablate_cmd->add_option("--seed", common.seed, "seed shared by every cell");
    ablate_cmd->add_option("--synth-days", n_days, "days for the synthesized dataset");
    add_model_flags(ablate_cmd, model);

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        SynthConfig cfg;
        cfg.seed = common.seed;
        cfg.n_days = n_days;
        write_csv(common.out, synthesize_dataset(cfg));
        std::cout << "wrote " << common.out << " (" << n_days << " days)\n";
        return 0;
    }

    if (render->parsed()) {
        const AlignedFrame frame = load_frame(common.data);
        const auto windows = make_windows(frame, model.seq_len);
        if (index >= windows.size())
            fail(ErrorKind::Usage, "window index " + std::to_string(index) + " out of range (have " +
                                       std::to_string(windows.size()) + ")");
        const ImageKind kind = image_kind_from(model.image_kind);
        const Spectrogram img = make_image(kind, windows[index].history, model.n_scales);
        write_pgm(common.out, img);
        const std::string sidecar = common.out + ".csv";
        write_matrix_csv(sidecar, img);
        std::cout << "wrote " << common.out << " and " << sidecar << "\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        fs::create_directories(common.out);
        write_text_file(common.out + "/config.txt", config_echo("train", common, model));
        const AlignedFrame frame = load_frame(common.data);
        PipelineResult res = run_training_pipeline(to_train_config(model, common.seed), frame);
        save_model_checkpoint(common.out + "/checkpoint.bin", res.trained.model, res.trained.standardizer);
        write_text_file(common.out + "/training_log.csv", training_log_csv(res.trained.log));
        write_text_file(common.out + "/metrics_test.csv", report_csv(res.test_report));
        write_text_file(common.out + "/metrics_test.txt", report_table(res.test_report));
        std::cout << "best epoch " << res.trained.best_epoch << " (val mse " << res.trained.best_val_mse << ")\n"
                  << report_table(res.test_report);
        return 0;
    }

    if (eval_cmd->parsed()) {
        LoadedModel loaded = load_model_checkpoint(checkpoint);
        const AlignedFrame frame = load_frame(common.data);
        Splits splits = chronological_split(make_windows(frame, loaded.model.config().seq_len));
        SampleView view = split_name == "train" ? splits.train()
                          : split_name == "val" ? splits.val()
                          : split_name == "test"
                              ? splits.test()
                              : (fail(ErrorKind::Usage, "unknown split '" + split_name + "'"), splits.test());
        const MetricsReport rep = evaluate(loaded.model, view, loaded.standardizer);
        std::cout << report_table(rep);
        if (!common.out.empty()) {
            fs::create_directories(common.out);
            write_text_file(common.out + "/metrics_" + split_name + ".csv", report_csv(rep));
            write_text_file(common.out + "/metrics_" + split_name + ".txt", report_table(rep));
        }
        return 0;
    }

    if (ablate_cmd->parsed()) {
        fs::create_directories(common.out);
        const AblationAxis axis = ablation_axis_from(axis_name);
        AlignedFrame frame;
        if (common.data.empty()) {
            SynthConfig cfg;
            cfg.seed = common.seed;
            cfg.n_days = n_days;
            const std::string synth_path = common.out + "/data.csv";
            write_csv(synth_path, synthesize_dataset(cfg));
            common.data = synth_path;
        }
        frame = load_frame(common.data);
        write_text_file(common.out + "/config.txt", config_echo("ablate axis=" + axis_name, common, model));
        const AblationResult res = run_ablation(axis, to_train_config(model, common.seed), frame, common.out);
        const std::string table = ablation_table(res);
        write_text_file(common.out + "/" + axis_name + "_table.txt", table);
        write_text_file(common.out + "/" + axis_name + "_table.csv", ablation_csv(res));
        std::cout << table;
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "semf: error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "semf: error: " << e.what() << "\n";
        return 1;
    }
}
