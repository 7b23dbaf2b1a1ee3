#include "avx/cli.hpp"

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "avx/config.hpp"
#include "avx/data.hpp"
#include "avx/eval.hpp"
#include "avx/predict.hpp"
#include "avx/training.hpp"

namespace avx {

using nlohmann::json;

namespace {

using Defaults = std::vector<std::pair<std::string, std::string>>;

// Binds command-line flags to settings keys. Flags win over config files.
struct Command {
    struct Binding {
        std::string key;
        std::string value;
        bool flag = false;
        bool flag_value = false;
        CLI::Option* opt = nullptr;
    };
    explicit Command(CLI::App* a) : app(a) {}

    CLI::App* app = nullptr;
    std::vector<std::unique_ptr<Binding>> bindings;
    std::string config_file;
    std::vector<std::string> overrides;
    bool json = false;
    bool accepts_config = false;

    void option(const std::string& flag, const std::string& key, const std::string& help) {
        auto b = std::make_unique<Binding>();
        b->key = key;
        b->opt = app->add_option(flag, b->value, help);
        bindings.push_back(std::move(b));
    }
    void positional(const std::string& name, const std::string& key, const std::string& help) {
        auto b = std::make_unique<Binding>();
        b->key = key;
        b->opt = app->add_option(name, b->value, help)->required();
        bindings.push_back(std::move(b));
    }
    void toggle(const std::string& flag, const std::string& key, const std::string& help) {
        auto b = std::make_unique<Binding>();
        b->key = key;
        b->flag = true;
        b->opt = app->add_flag(flag, b->flag_value, help);
        bindings.push_back(std::move(b));
    }
    void with_config() {
        accepts_config = true;
        app->add_option("--config", config_file, "key = value settings file");
        app->add_option("--set", overrides, "override one setting (key=value), repeatable");
    }
    void with_json(const std::string& help) { app->add_flag("--json", json, help); }

    void apply(Settings& s) const {
        if (!config_file.empty()) s.merge_file(config_file);
        for (const auto& o : overrides) s.set_override(o);
        for (const auto& b : bindings) {
            if (b->opt->count() == 0) continue;
            s.set(b->key, b->flag ? (b->flag_value ? "true" : "false") : b->value);
        }
    }
};

struct Streams {
    std::ostream& out;
    std::ostream& err;
    bool json;
    // Machine-readable runs keep stdout clean; the config goes to stderr.
    std::ostream& echo() const { return json ? err : out; }
};

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// --- data ------------------------------------------------------------------

Settings fixture_settings() {
    return Settings({{"n", "8"}, {"seed", "0"}, {"out", ""}, {"image_size", "8"}, {"frames", "8"}});
}

int cmd_make_fixtures(const Settings& s, const Streams& io) {
    if (s.get("out").empty()) {
        io.err << "error: --out is required\n";
        return kExitUsage;
    }
    FixtureOptions opts;
    opts.image_size = static_cast<int>(s.get_int("image_size"));
    opts.frames = static_cast<int>(s.get_int("frames"));
    const auto n = s.get_int("n");
    if (n < 0) throw ConfigError("n must be non-negative");
    const auto set = make_fixtures(s.get("out"), static_cast<int>(n), s.get_u64("seed"), opts);
    if (io.json) {
        io.out << json{{"samples", set.samples.size()}, {"out", s.get("out")}}.dump() << '\n';
    } else {
        io.out << "wrote " << set.samples.size() << " samples to " << s.get("out") << '\n';
    }
    return kExitOk;
}

int cmd_validate(const Settings& s, const Streams& io) {
    const std::filesystem::path path = s.get("benchmark");
    if (!std::filesystem::is_regular_file(path)) throw MissingInputError("no benchmark file at " + path.string());
    const auto set = load_benchmark(path);
    const auto report = validate_benchmark(set);
    for (const auto& v : report.violations) {
        io.err << "violation: " << v.sample_id << ": " << v.kind << ": " << v.detail << '\n';
    }
    if (io.json) {
        json vs = json::array();
        for (const auto& v : report.violations) vs.push_back({{"sample_id", v.sample_id}, {"kind", v.kind}, {"detail", v.detail}});
        io.out << json{{"samples", set.samples.size()}, {"violations", vs}}.dump() << '\n';
    } else {
        io.out << set.samples.size() << " samples, " << report.violations.size() << " violations\n";
    }
    return report.clean() ? kExitOk : kExitValidation;
}

// --- train -----------------------------------------------------------------

Settings train_settings() {
    return Settings({{"stage", ""},
                     {"data", ""},
                     {"ckpt_in", ""},
                     {"adapters_in", ""},
                     {"ckpt_out", "avx.ckpt"},
                     {"adapters_out", ""},
                     {"report", ""},
                     {"model", "toy"},
                     {"seed", "0"},
                     {"lr", ""},
                     {"epochs", "1"},
                     {"steps", "0"},
                     {"global_batch", "4"},
                     {"micro_batch", "4"},
                     {"warmup_ratio", "0.03"},
                     {"weight_decay", "0.01"},
                     {"schedule", "cosine"},
                     {"lora_rank", "8"},
                     {"lora_alpha", "16"}});
}

bool trains_adapters(const StagePlan& plan) {
    return std::find(plan.trainable.begin(), plan.trainable.end(), "lora.*") != plan.trainable.end();
}

int cmd_train(Settings& s, const Streams& io, const std::string& usage) {
    StageId stage;
    try {
        stage = parse_stage(s.get("stage"));
    } catch (const ConfigError& e) {
        io.err << "error: " << e.what() << "\n" << usage;
        return kExitUsage;
    }
    s.set("stage", to_string(stage));
    if (s.get("data").empty()) throw ConfigError("data is required (a JSONL file of instruction samples)");

    const uint64_t seed = s.get_u64("seed");
    std::optional<AvModel> model;
    if (!s.get("ckpt_in").empty()) {
        std::optional<std::filesystem::path> adapters;
        if (!s.get("adapters_in").empty()) adapters = s.get("adapters_in");
        model.emplace(AvModel::load(s.get("ckpt_in"), adapters));
        s.set("lora_rank", std::to_string(model->config().lora.rank));
        s.set("lora_alpha", format_double(model->config().lora.alpha));
    } else {
        ModelConfig cfg;
        if (s.get("model") == "toy") {
            cfg = ModelConfig::toy();
        } else if (s.get("model") == "paper_scale") {
            cfg = ModelConfig::paper_scale();
        } else {
            throw ConfigError("model must be toy or paper_scale, got '" + s.get("model") + "'");
        }
        cfg.lora.rank = static_cast<int>(s.get_int("lora_rank"));
        cfg.lora.alpha = s.get_double("lora_alpha");
        model.emplace(AvModel::create(cfg, seed));
    }

    StagePlan plan = plan_stage(stage, model->config());
    if (s.get("lr").empty()) s.set("lr", format_double(plan.lr));
    plan.lr = s.get_double("lr");
    plan.epochs = static_cast<int>(s.get_int("epochs"));
    plan.steps = s.get_int("steps");
    plan.global_batch = static_cast<int>(s.get_int("global_batch"));
    plan.micro_batch = static_cast<int>(s.get_int("micro_batch"));
    plan.warmup_ratio = s.get_double("warmup_ratio");
    plan.weight_decay = s.get_double("weight_decay");
    plan.seed = seed;
    if (s.get("schedule") != "cosine" && s.get("schedule") != "constant") {
        throw ConfigError("schedule must be cosine or constant");
    }
    plan.cosine = s.get("schedule") == "cosine";
    accumulate(plan.micro_batch, plan.global_batch);
    if (s.get("adapters_out").empty() && trains_adapters(plan)) s.set("adapters_out", s.get("ckpt_out") + ".lora");
    if (s.get("report").empty()) s.set("report", s.get("ckpt_out") + ".report.jsonl");

    io.echo() << s.echo("train");

    const std::filesystem::path data_path = s.get("data");
    if (!std::filesystem::is_regular_file(data_path)) throw MissingInputError("no data file at " + data_path.string());
    const auto samples = load_jsonl(data_path, LoadMode::Train);
    const auto examples = prepare_examples(samples, data_path.parent_path(), plan, *model);

    std::ofstream report_os(s.get("report"), std::ios::trunc);
    if (!report_os) throw MissingInputError("cannot write report " + s.get("report"));
    const auto report = run_stage(plan, examples, *model, &report_os);

    model->save(s.get("ckpt_out"));
    if (!s.get("adapters_out").empty()) model->save_adapters(s.get("adapters_out"));

    const json summary{{"stage", to_string(stage)},
                       {"steps", report.losses.size()},
                       {"first_loss", report.losses.front()},
                       {"final_loss", report.final_loss()},
                       {"wall_seconds", report.wall_seconds},
                       {"updated", report.updated},
                       {"frozen", report.frozen},
                       {"frozen_intact", report.frozen_intact},
                       {"checksum", hex64(report.checksum)},
                       {"ckpt_out", s.get("ckpt_out")},
                       {"adapters_out", s.get("adapters_out")},
                       {"report", s.get("report")}};
    if (io.json) {
        io.out << summary.dump() << '\n';
    } else {
        io.out << "stage " << to_string(stage) << ": " << report.losses.size() << " steps, loss "
               << report.losses.front() << " -> " << report.final_loss() << ", " << report.wall_seconds << " s\n";
        io.out << "updated " << report.updated << " parameters, froze " << report.frozen << ", checksum "
               << hex64(report.checksum) << '\n';
        io.out << "checkpoint " << s.get("ckpt_out") << '\n';
        if (!s.get("adapters_out").empty()) io.out << "adapters " << s.get("adapters_out") << '\n';
    }
    return kExitOk;
}

// --- infer -----------------------------------------------------------------

Settings infer_settings() {
    return Settings({{"ckpt", ""},
                     {"adapters", ""},
                     {"sample", ""},
                     {"id", ""},
                     {"base_dir", ""},
                     {"question", ""},
                     {"max_new", "64"},
                     {"no_audio", "false"}});
}

AvModel load_model(const Settings& s) {
    if (s.get("ckpt").empty()) throw ConfigError("ckpt is required");
    std::optional<std::filesystem::path> adapters;
    if (!s.get("adapters").empty()) adapters = s.get("adapters");
    return AvModel::load(s.get("ckpt"), adapters);
}

// Inline JSON, a .json file holding one object, or a JSONL file (first
// record, or the one named by `id`).
std::pair<InstructionSample, std::filesystem::path> read_sample(const Settings& s) {
    const std::string& spec = s.get("sample");
    if (spec.empty()) throw ConfigError("sample is required");
    std::filesystem::path base = s.get("base_dir");
    if (spec.front() == '{') {
        return {sample_from_json(json::parse(spec), LoadMode::Inference), base};
    }
    const std::filesystem::path path = spec;
    if (!std::filesystem::is_regular_file(path)) throw MissingInputError("no sample file at " + path.string());
    if (base.empty()) base = path.parent_path();
    const auto samples = load_jsonl(path, LoadMode::Inference);
    if (samples.empty()) throw ValidationError(path.string() + " holds no samples");
    if (s.get("id").empty()) return {samples.front(), base};
    for (const auto& x : samples)
        if (x.id == s.get("id")) return {x, base};
    throw ValidationError("no sample with id '" + s.get("id") + "' in " + path.string());
}

int cmd_infer(Settings& s, const Streams& io) {
    io.echo() << s.echo("infer");
    const auto model = load_model(s);
    const auto [sample, base] = read_sample(s);
    InferOptions opts;
    opts.max_new = static_cast<int>(s.get_int("max_new"));
    opts.no_audio = s.get_bool("no_audio");
    const std::string question = s.get("question").empty() ? sample.question : s.get("question");
    const auto media = load_media(model, sample, base, opts);
    const std::string answer = answer_question(model, media, question, opts);
    if (io.json) {
        io.out << json{{"sample_id", sample.id}, {"question", question}, {"prediction", answer},
                       {"no_audio", opts.no_audio}}
                      .dump()
               << '\n';
    } else {
        io.out << answer << '\n';
    }
    return kExitOk;
}

// --- eval ------------------------------------------------------------------

Settings eval_settings() {
    return Settings({{"ckpt", ""},
                     {"adapters", ""},
                     {"benchmark", ""},
                     {"judge", "stub"},
                     {"judge_url", ""},
                     {"judge_model", "gpt-3.5-turbo"},
                     {"metrics", "correctness,detail,context,temporal,consistency"},
                     {"records", ""},
                     {"predictions", ""},
                     {"replay", ""},
                     {"echo", "false"},
                     {"no_audio", "false"},
                     {"max_new", "64"},
                     {"workers", "4"},
                     {"rounding", "truncate"}});
}

std::vector<Metric> parse_metric_list(const std::string& list) {
    std::vector<Metric> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "all") return all_metrics();
        if (!item.empty()) out.push_back(parse_metric(item));
    }
    if (out.empty()) throw ConfigError("no metrics requested");
    return out;
}

int cmd_eval(Settings& s, const Streams& io) {
    if (s.get("records").empty() && !s.get("ckpt").empty()) s.set("records", s.get("ckpt") + ".records.jsonl");
    io.echo() << s.echo("eval");

    const std::filesystem::path bench_path = s.get("benchmark");
    if (bench_path.empty()) throw ConfigError("benchmark is required");
    if (!std::filesystem::is_regular_file(bench_path)) {
        throw MissingInputError("no benchmark file at " + bench_path.string());
    }
    const auto bench = load_benchmark(bench_path);

    EvalOptions opts;
    opts.metrics = parse_metric_list(s.get("metrics"));
    opts.workers = static_cast<int>(s.get_int("workers"));
    if (s.get("rounding") == "truncate") {
        opts.rounding = Rounding::Truncate;
    } else if (s.get("rounding") == "half_up") {
        opts.rounding = Rounding::HalfUp;
    } else {
        throw ConfigError("rounding must be truncate or half_up");
    }
    if (!s.get("records").empty()) opts.records_path = s.get("records");
    if (!s.get("predictions").empty()) opts.predictions_path = s.get("predictions");

    std::unique_ptr<Judge> judge;
    if (s.get("judge") == "stub") {
        judge = std::make_unique<StubJudge>();
    } else if (s.get("judge") == "api") {
        ApiJudgeOptions api;
        api.url = s.get("judge_url");
        api.model = s.get("judge_model");
        if (api.url.empty()) throw ConfigError("judge_url is required with the api judge");
        judge = std::make_unique<ApiJudge>(api);
    } else {
        throw ConfigError("judge must be stub or api");
    }

    std::optional<AvModel> model;
    std::unique_ptr<Predictor> predictor;
    if (!s.get("replay").empty()) {
        predictor = std::make_unique<ReplayPredictor>(s.get("replay"));
    } else if (s.get_bool("echo")) {
        predictor = std::make_unique<EchoPredictor>();
    } else {
        model.emplace(load_model(s));
        InferOptions infer;
        infer.max_new = static_cast<int>(s.get_int("max_new"));
        infer.no_audio = s.get_bool("no_audio");
        predictor = std::make_unique<ModelPredictor>(*model, bench.base_dir, infer);
    }

    const auto result = run_eval(bench, *predictor, *judge, opts);
    for (const auto& w : result.warnings) io.err << "warning: " << w << '\n';
    const json card = result.scorecard.to_json();
    io.out << (io.json ? card.dump() : card.dump(2)) << '\n';
    return kExitOk;
}

// --- ckpt ------------------------------------------------------------------

int cmd_inspect(const Settings& s, const Streams& io) {
    const auto tensors = read_checkpoint(s.get("file"));
    json list = json::array();
    for (const auto& t : tensors) {
        const Tensor tensor = from_named(t);
        const std::string sum = hex64(tensor_checksum(tensor));
        if (io.json) {
            list.push_back({{"name", t.name}, {"shape", t.shape}, {"checksum", sum}});
        } else {
            io.out << t.name << '\t' << shape_str(t.shape) << '\t' << sum << '\n';
        }
    }
    if (io.json) io.out << json{{"file", s.get("file")}, {"tensors", list}}.dump() << '\n';
    return kExitOk;
}

int cmd_merge(const Settings& s, const Streams& io) {
    for (const char* key : {"base", "adapters", "out"})
        if (s.get(key).empty()) throw ConfigError(std::string(key) + " is required");
    auto model = AvModel::load(s.get("base"), std::filesystem::path(s.get("adapters")));
    model.merge_adapters();
    model.save(s.get("out"));
    if (io.json) {
        io.out << json{{"out", s.get("out")}, {"checksum", hex64(model_checksum(model))}}.dump() << '\n';
    } else {
        io.out << "merged " << s.get("adapters") << " into " << s.get("out") << '\n';
    }
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"avx: audio-visual instruction model toolkit"};
    app.name("avx");
    app.require_subcommand(1);

    auto* data = app.add_subcommand("data", "fixture generation and benchmark validation");
    data->require_subcommand(1);
    auto* train_app = app.add_subcommand("train", "run one training stage");
    auto* infer_app = app.add_subcommand("infer", "answer one sample with a checkpoint");
    auto* eval_app = app.add_subcommand("eval", "score a checkpoint on a benchmark");
    auto* ckpt = app.add_subcommand("ckpt", "checkpoint tools");
    ckpt->require_subcommand(1);

    Command fx{data->add_subcommand("make-fixtures", "write a synthetic audio-visual benchmark")};
    fx.option("--n", "n", "number of samples");
    fx.option("--seed", "seed", "random seed");
    fx.option("--out", "out", "output directory");
    fx.option("--image-size", "image_size", "frame width and height in pixels");
    fx.option("--frames", "frames", "frames per clip");
    fx.with_json("print a JSON summary");

    Command val{data->add_subcommand("validate", "check a benchmark JSONL file")};
    val.positional("benchmark", "benchmark", "benchmark JSONL file");
    val.with_json("print findings as JSON");

    Command tr{train_app};
    tr.option("--stage", "stage", "pretrain-audio | pretrain-vision | pretrain-lm | finetune-av | finetune-vision-only");
    tr.option("--data", "data", "training JSONL");
    tr.option("--ckpt-in", "ckpt_in", "start from this checkpoint");
    tr.option("--adapters-in", "adapters_in", "start from these adapters");
    tr.option("--ckpt-out", "ckpt_out", "checkpoint to write");
    tr.option("--adapters-out", "adapters_out", "adapter file to write");
    tr.option("--report", "report", "JSONL training report");
    tr.option("--model", "model", "toy | paper_scale (new models only)");
    tr.option("--seed", "seed", "seed for initialization and data order");
    tr.option("--lr", "lr", "peak learning rate");
    tr.option("--epochs", "epochs", "passes over the data when --steps is 0");
    tr.option("--steps", "steps", "optimizer steps");
    tr.option("--global-batch", "global_batch", "samples per optimizer step");
    tr.option("--micro-batch", "micro_batch", "samples per accumulation chunk");
    tr.with_config();
    tr.with_json("print a JSON summary");

    Command inf{infer_app};
    inf.option("--ckpt", "ckpt", "base checkpoint");
    inf.option("--adapters", "adapters", "adapter checkpoint");
    inf.option("--sample", "sample", "inline JSON, .json file or JSONL file");
    inf.option("--id", "id", "sample id within a JSONL file");
    inf.option("--base-dir", "base_dir", "directory media paths are relative to");
    inf.option("--question", "question", "ask this instead of the sample question");
    inf.option("--max-new", "max_new", "maximum generated tokens");
    inf.toggle("--no-audio", "no_audio", "leave the audio span empty");
    inf.with_config();
    inf.with_json("print a JSON object");

    Command ev{eval_app};
    ev.option("--ckpt", "ckpt", "base checkpoint");
    ev.option("--adapters", "adapters", "adapter checkpoint");
    ev.option("--benchmark", "benchmark", "benchmark JSONL");
    ev.option("--judge", "judge", "stub | api");
    ev.option("--judge-url", "judge_url", "chat-completions endpoint for the api judge");
    ev.option("--judge-model", "judge_model", "model name sent to the api judge");
    ev.option("--metrics", "metrics", "comma-separated metric names or 'all'");
    ev.option("--records", "records", "where to write per-record JSONL");
    ev.option("--predictions", "predictions", "where to write predictions JSONL");
    ev.option("--replay", "replay", "score stored predictions instead of generating");
    ev.toggle("--echo", "echo", "predict the reference answer (plumbing check)");
    ev.toggle("--no-audio", "no_audio", "leave the audio span empty");
    ev.option("--max-new", "max_new", "maximum generated tokens");
    ev.option("--workers", "workers", "concurrent judge calls");
    ev.option("--rounding", "rounding", "truncate | half_up");
    ev.with_config();
    ev.with_json("print the scorecard on one line; config goes to stderr");

    Command ins{ckpt->add_subcommand("inspect", "list tensors with shape and checksum")};
    ins.positional("file", "file", "checkpoint file");
    ins.with_json("print JSON");

    Command mg{ckpt->add_subcommand("merge-lora", "fold adapters into base weights")};
    mg.option("--base", "base", "base checkpoint");
    mg.option("--adapters", "adapters", "adapter checkpoint");
    mg.option("--out", "out", "merged checkpoint to write");
    mg.with_json("print JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    auto run = [&](Command& c, Settings s, const std::string& title, auto&& body) -> int {
        c.apply(s);
        Streams io{out, err, c.json};
        if (title != "train" && title != "infer" && title != "eval") io.echo() << s.echo(title);
        return body(s, io);
    };

    try {
        if (fx.app->parsed()) {
            return run(fx, fixture_settings(), "data make-fixtures",
                       [](Settings& s, const Streams& io) { return cmd_make_fixtures(s, io); });
        }
        if (val.app->parsed()) {
            return run(val, Settings(Defaults{{"benchmark", ""}}), "data validate",
                       [](Settings& s, const Streams& io) { return cmd_validate(s, io); });
        }
        if (tr.app->parsed()) {
            const std::string usage = train_app->help();
            return run(tr, train_settings(), "train",
                       [&](Settings& s, const Streams& io) { return cmd_train(s, io, usage); });
        }
        if (inf.app->parsed()) {
            return run(inf, infer_settings(), "infer", [](Settings& s, const Streams& io) { return cmd_infer(s, io); });
        }
        if (ev.app->parsed()) {
            return run(ev, eval_settings(), "eval", [](Settings& s, const Streams& io) { return cmd_eval(s, io); });
        }
        if (ins.app->parsed()) {
            return run(ins, Settings(Defaults{{"file", ""}}), "ckpt inspect",
                       [](Settings& s, const Streams& io) { return cmd_inspect(s, io); });
        }
        if (mg.app->parsed()) {
            return run(mg, Settings(Defaults{{"base", ""}, {"adapters", ""}, {"out", ""}}), "ckpt merge-lora",
                       [](Settings& s, const Streams& io) { return cmd_merge(s, io); });
        }
    } catch (const NumericError& e) {
        err << "error: numeric abort: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const TransportError& e) {
        err << "error: judge transport failed: " << e.what() << '\n';
        return kExitTransport;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace avx
