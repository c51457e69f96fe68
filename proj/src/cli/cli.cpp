// SPDX-License-Identifier: Apache-2.0

#include "m3d/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "m3d/binary_io.hpp"
#include "m3d/checkpoint.hpp"
#include "m3d/corpus.hpp"
#include "m3d/denoiser.hpp"
#include "m3d/guidance.hpp"
#include "m3d/image_io.hpp"
#include "m3d/metrics.hpp"
#include "m3d/planner.hpp"
#include "m3d/trainer.hpp"

namespace m3d {

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha1: digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::vector<std::size_t> parse_levels(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
    }
    if (used != item.size() || v < 1) throw std::invalid_argument("levels: '" + text + "' is not a comma list of positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw std::invalid_argument("levels: empty list");
  return out;
}

namespace {

using json = nlohmann::json;

// Outputs staged in memory, relative path -> bytes.
class Outputs {
 public:
  void add(const std::string& name, std::string bytes) { files_[name] = std::move(bytes); }
  const std::string& get(const std::string& name) const { return files_.at(name); }
  json names() const {
    json a = json::array();
    for (const auto& [name, _] : files_) a.push_back(name);
    return a;
  }
  void commit(const std::filesystem::path& dir, const json& manifest, const std::string& timing = {}) const {
    std::filesystem::create_directories(dir);
    for (const auto& [name, _] : files_) std::filesystem::create_directories((dir / name).parent_path());
    for (const auto& [name, bytes] : files_) write_file_atomic(dir / name, bytes);
    if (!timing.empty()) write_file_atomic(dir / "timing.csv", timing);
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  std::map<std::string, std::string> files_;
};

json base_manifest(const std::string& command, std::uint64_t seed, const Outputs& outputs) {
  json m;
  m["command"] = command;
  m["seed"] = seed;
  m["outputs"] = outputs.names();
  m["format_version"] = 1;
  return m;
}

struct MaskFlags {
  std::string strategy = "single";
  std::string side = "left";
  std::string axis = "horizontal";
  double ratio = 0.5;

  void add(CLI::App& app) {
    app.add_option("--mask-strategy", strategy, "four|single|bi|random|all")->capture_default_str();
    app.add_option("--side", side, "side for single: left|right|top|bottom")->capture_default_str();
    app.add_option("--axis", axis, "axis for bi: horizontal|vertical")->capture_default_str();
    app.add_option("--ratio", ratio, "fraction hidden per masked axis")->capture_default_str();
  }

  json to_json() const { return {{"mask_strategy", strategy}, {"side", side}, {"axis", axis}, {"ratio", ratio}}; }

  MaskSpec build(std::size_t height, std::size_t width, std::uint64_t seed) const {
    const auto kind = parse_mask_strategy(strategy);
    switch (kind) {
      case MaskStrategy::All:
        return MaskSpec::all_hidden(height, width);
      case MaskStrategy::FourDir:
        return MaskSpec::make(kind, {Side::Left, Side::Right, Side::Top, Side::Bottom}, ratio, height, width);
      case MaskStrategy::SingleDir:
        return MaskSpec::make(kind, {parse_side(side)}, ratio, height, width);
      case MaskStrategy::BiDir:
        if (axis == "horizontal") return MaskSpec::make(kind, {Side::Left, Side::Right}, ratio, height, width);
        if (axis == "vertical") return MaskSpec::make(kind, {Side::Top, Side::Bottom}, ratio, height, width);
        throw std::invalid_argument("unknown axis '" + axis + "' (expected horizontal|vertical)");
      case MaskStrategy::RandomDirCount: {
        Rng rng = make_rng(seed, 0x6d61736b);
        std::vector<Side> all = {Side::Left, Side::Right, Side::Top, Side::Bottom};
        const auto k = 1 + uniform_index(rng, 4);
        for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + uniform_index(rng, 4 - i)]);
        all.resize(k);
        return MaskSpec::make(kind, all, ratio, height, width);
      }
    }
    throw std::invalid_argument("unhandled mask strategy");
  }

  static Side parse_side(const std::string& s) {
    if (s == "left") return Side::Left;
    if (s == "right") return Side::Right;
    if (s == "top") return Side::Top;
    if (s == "bottom") return Side::Bottom;
    throw std::invalid_argument("unknown side '" + s + "' (expected left|right|top|bottom)");
  }
};

Image frame_image(const Tensor& frames, std::size_t k) {
  const auto c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  Image img{h, w, c, std::vector<float>(h * w * c)};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < h * w; ++p) img.pixels[p * c + ch] = frames.data()[(k * c + ch) * h * w + p];
  return img;
}

std::string frame_name(const std::string& prefix, std::size_t k, std::size_t channels) {
  std::ostringstream os;
  os << prefix << std::setw(4) << std::setfill('0') << k << (channels == 1 ? ".pgm" : ".ppm");
  return os.str();
}

Video load_video(const std::string& path, std::size_t index) {
  const auto corpus = read_corpus(path);
  if (index >= corpus.size()) {
    throw std::invalid_argument(path + ": video index " + std::to_string(index) + " out of range (" +
                                std::to_string(corpus.size()) + " videos)");
  }
  return corpus[index];
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  SyntheticSpec spec;
  std::string motif = "moving-square";
  std::size_t count = 64;
  std::string out;
};

int run_gen_corpus(const GenCorpusArgs& a, std::ostream& out) {
  auto spec = a.spec;
  spec.motif = parse_motif(a.motif);
  const auto videos = generate_corpus(spec, a.count);
  Outputs o;
  o.add("corpus.m3dv", encode_corpus(videos));
  auto m = base_manifest("gen-corpus", spec.seed, o);
  m["config"] = {{"motif", a.motif},         {"count", a.count},       {"frames", spec.frames},
                 {"height", spec.height},     {"width", spec.width},    {"channels", spec.channels},
                 {"max_velocity", spec.max_velocity}, {"amplitude", spec.amplitude}, {"fps", spec.fps}};
  m["output_hashes"] = {{"corpus.m3dv", git_blob_sha1(o.get("corpus.m3dv"))}};
  o.commit(a.out, m);
  out << "wrote " << a.count << " videos to " << (std::filesystem::path(a.out) / "corpus.m3dv").string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string corpus, out;
  TrainConfig train;
  DenoiserConfig model;
  std::string widths = "16,32";
  std::size_t log_every = 100;
};

int run_train(TrainArgs a, std::ostream& out) {
  const auto corpus_bytes = read_file(a.corpus);
  const auto corpus = decode_corpus(corpus_bytes, a.corpus);
  if (corpus.empty()) throw std::invalid_argument(a.corpus + ": corpus is empty");
  a.model.widths = parse_levels(a.widths);
  a.model.size = corpus.front().height;
  a.model.channels = corpus.front().channels;
  if (corpus.front().width != corpus.front().height) throw std::invalid_argument("train: frames must be square");
  auto model = Denoiser::init(a.model, a.train.seed);
  const auto schedule = NoiseSchedule::build(ScheduleKind::ScaledLinear, a.model.train_steps);
  const auto losses = train(model, corpus, schedule, a.train, [&](std::size_t step, double loss) {
    if (a.log_every && (step + 1) % a.log_every == 0) out << "step " << step + 1 << " loss " << loss << '\n' << std::flush;
  });
  Outputs o;
  const auto ckpt = encode_checkpoint(model.params(), model.config().to_header());
  o.add("model.ckpt", ckpt);
  o.add("loss.csv", loss_csv(losses));
  auto m = base_manifest("train", a.train.seed, o);
  m["inputs"] = {{"corpus", a.corpus}};
  m["input_hashes"] = {{"corpus", git_blob_sha1(corpus_bytes)}};
  m["checkpoint_sha1"] = git_blob_sha1(ckpt);
  m["config"] = {{"steps", a.train.steps},          {"batch", a.train.batch},   {"lr", a.train.adam.lr},
                 {"warmup", a.train.adam.warmup_steps}, {"p2", a.train.p2},       {"frames", a.model.frames},
                 {"global_frames", a.model.global_frames}, {"widths", a.widths}, {"model_header", a.model.to_header()}};
  o.commit(a.out, m);
  out << "trained " << losses.size() << " steps, final loss " << losses.back() << '\n';
  return 0;
}

struct PlanArgs {
  std::size_t length = 0, frames = 16;
  std::string levels = "30,15,1", mode = "hybrid", out;
};

int run_plan(const PlanArgs& a, std::ostream& out) {
  const auto plan = make_plan(parse_plan_mode(a.mode), a.length, a.frames, parse_levels(a.levels));
  validate_plan(plan);
  const auto table = plan_table(plan), csv = plan_depth_csv(plan);
  if (!a.out.empty()) {
    Outputs o;
    o.add("plan.txt", table);
    o.add("plan.csv", csv);
    auto m = base_manifest("plan", 0, o);
    m["config"] = {{"length", a.length}, {"frames", a.frames}, {"levels", a.levels}, {"mode", a.mode}};
    o.commit(a.out, m);
  }
  out << csv << table;
  return 0;
}

struct OutpaintArgs {
  std::string checkpoint, video, out;
  std::size_t index = 0;
  MaskFlags mask;
  std::string mode = "ctf", levels = "30,15,1", init = "pure", sampler = "ddim";
  std::size_t sample_steps = 50;
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
};

int run_outpaint(const OutpaintArgs& a, std::ostream& out) {
  const auto ckpt_bytes = read_file(a.checkpoint);
  auto ckpt = decode_checkpoint(ckpt_bytes, a.checkpoint);
  const Denoiser model(DenoiserConfig::from_header(ckpt.header), std::move(ckpt.params));
  const auto video_bytes = read_file(a.video);
  const auto corpus = decode_corpus(video_bytes, a.video);
  if (a.index >= corpus.size()) throw std::invalid_argument(a.video + ": video index out of range");
  const auto& video = corpus[a.index];
  const auto truth = video.to_tensor();
  const auto mask = a.mask.build(video.height, video.width, a.seed);
  const auto plan = make_plan(parse_plan_mode(a.mode), video.frames, model.config().frames, parse_levels(a.levels));
  const auto schedule = NoiseSchedule::build(ScheduleKind::ScaledLinear, model.config().train_steps);

  ExecuteOptions opts;
  opts.outpaint.guidance = a.guidance;
  opts.outpaint.sampler.num_inference_steps = a.sample_steps;
  if (a.sampler == "ddim") {
    opts.outpaint.sampler.kind = SamplerKind::Ddim;
  } else if (a.sampler == "plms") {
    opts.outpaint.sampler.kind = SamplerKind::Plms;
  } else {
    throw std::invalid_argument("unknown sampler '" + a.sampler + "' (expected ddim|plms)");
  }
  opts.outpaint.init = parse_init_mode(a.init);
  opts.outpaint.seed = a.seed;
  opts.threads = worker_count();
  const auto result = execute_plan(model, schedule, plan, truth, mask, opts);
  const auto baseline = border_replication(truth, mask);

  Outputs o;
  o.add("output.m3dv", encode_corpus({Video::from_tensor(result.video, video.fps)}));
  for (std::size_t k = 0; k < video.frames; ++k) {
    o.add(frame_name("frames/frame_", k, video.channels), encode_pnm(frame_image(result.video, k)));
  }
  std::ostringstream timing;
  timing << "call_id,seconds\n";
  for (const auto& r : result.records) {
    for (std::size_t k = 0; k < r.indices.size(); ++k) {
      o.add("clips/clip" + std::to_string(r.call_id) + "_f" + std::to_string(k) + (video.channels == 1 ? ".pgm" : ".ppm"),
            encode_pnm(frame_image(r.frames, k)));
    }
    timing << r.call_id << ',' << r.seconds << '\n';
  }
  {
    Image m{video.height, video.width, 1, mask.as_floats()};
    o.add("mask.pgm", encode_pnm(m));
  }
  o.add("calls.csv", call_records_csv(result.records));
  o.add("plan.txt", plan_table(plan));
  const auto model_metrics = evaluate(result.video, truth, mask, Region::HiddenOnly, "model");
  const auto base_metrics = evaluate(baseline, truth, mask, Region::HiddenOnly, "border-replication");
  o.add("metrics.csv", metrics_csv_header() + metrics_csv_row(model_metrics) + metrics_csv_row(base_metrics) +
                           metrics_csv_row(evaluate(result.video, truth, mask, Region::FullFrame, "model")));

  auto m = base_manifest("outpaint", a.seed, o);
  m["inputs"] = {{"checkpoint", a.checkpoint}, {"video", a.video}, {"index", a.index}};
  m["input_hashes"] = {{"checkpoint", git_blob_sha1(ckpt_bytes)}, {"video", git_blob_sha1(video_bytes)}};
  m["checkpoint_sha1"] = git_blob_sha1(ckpt_bytes);
  m["config"] = a.mask.to_json();
  m["config"].update({{"mode", a.mode},
                      {"levels", a.levels},
                      {"init", a.init},
                      {"sampler", a.sampler},
                      {"sample_steps", a.sample_steps},
                      {"s1", a.guidance.s1},
                      {"s2", a.guidance.s2}});
  o.commit(a.out, m, timing.str());
  out << "calls=" << plan.calls.size() << " chain_depth=" << chain_depth(plan) << " hidden_mse="
      << (model_metrics.mse ? std::to_string(*model_metrics.mse) : "n/a") << " baseline_mse="
      << (base_metrics.mse ? std::to_string(*base_metrics.mse) : "n/a") << '\n';
  return 0;
}

struct EvalArgs {
  std::string pred, truth, out;
  MaskFlags mask;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  const auto pred_bytes = read_file(a.pred), truth_bytes = read_file(a.truth);
  const auto pred = decode_corpus(pred_bytes, a.pred), truth = decode_corpus(truth_bytes, a.truth);
  if (pred.size() > truth.size()) {
    throw std::invalid_argument("eval: " + a.pred + " has more videos than " + a.truth);
  }
  std::string csv = metrics_csv_header();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred[i].to_tensor(), t = truth[i].to_tensor();
    const auto mask = a.mask.build(truth[i].height, truth[i].width, a.seed);
    const auto name = "video" + std::to_string(i);
    csv += metrics_csv_row(evaluate(p, t, mask, Region::HiddenOnly, name));
    csv += metrics_csv_row(evaluate(p, t, mask, Region::FullFrame, name));
  }
  Outputs o;
  o.add("metrics.csv", csv);
  auto m = base_manifest("eval", a.seed, o);
  m["inputs"] = {{"pred", a.pred}, {"truth", a.truth}};
  m["input_hashes"] = {{"pred", git_blob_sha1(pred_bytes)}, {"truth", git_blob_sha1(truth_bytes)}};
  m["config"] = a.mask.to_json();
  o.commit(a.out, m);
  out << csv;
  return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked 3D diffusion for video outpainting at desk scale", "m3ddm"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "write a synthetic video corpus");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--count", gen.count)->capture_default_str();
  g->add_option("--motif", gen.motif, "moving-square|moving-gradient|panning-texture")->capture_default_str();
  g->add_option("--frames", gen.spec.frames)->capture_default_str();
  g->add_option("--height", gen.spec.height)->capture_default_str();
  g->add_option("--width", gen.spec.width)->capture_default_str();
  g->add_option("--channels", gen.spec.channels)->capture_default_str();
  g->add_option("--max-velocity", gen.spec.max_velocity)->capture_default_str();
  g->add_option("--amplitude", gen.spec.amplitude)->capture_default_str();
  g->add_option("--fps", gen.spec.fps)->capture_default_str();
  g->add_option("--seed", gen.spec.seed)->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the denoiser on a corpus");
  t->add_option("--corpus", tr.corpus)->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--steps", tr.train.steps)->capture_default_str();
  t->add_option("--batch", tr.train.batch)->capture_default_str();
  t->add_option("--lr", tr.train.adam.lr)->capture_default_str();
  t->add_option("--warmup", tr.train.adam.warmup_steps)->capture_default_str();
  t->add_option("--p2", tr.train.p2, "prompt dropout probability")->capture_default_str();
  t->add_option("--seed", tr.train.seed)->capture_default_str();
  t->add_option("--frames", tr.model.frames, "frames per clip")->capture_default_str();
  t->add_option("--global-frames", tr.model.global_frames)->capture_default_str();
  t->add_option("--widths", tr.widths, "channel widths per level")->capture_default_str();
  t->add_option("--log-every", tr.log_every)->capture_default_str();

  PlanArgs pl;
  auto* p = app.add_subcommand("plan", "print an inference plan");
  p->add_option("--length", pl.length)->required();
  p->add_option("--frames", pl.frames)->capture_default_str();
  p->add_option("--levels", pl.levels)->capture_default_str();
  p->add_option("--mode", pl.mode, "hybrid|dense|infill-only")->capture_default_str();
  p->add_option("--out", pl.out, "also write plan.txt and plan.csv here");

  OutpaintArgs op;
  auto* o = app.add_subcommand("outpaint", "outpaint one video");
  o->add_option("--checkpoint", op.checkpoint)->required();
  o->add_option("--video", op.video, "corpus file")->required();
  o->add_option("--index", op.index, "video index in the corpus")->capture_default_str();
  o->add_option("--out", op.out, "output directory")->required();
  op.mask.add(*o);
  o->add_option("--mode", op.mode, "ctf|dense|infill-only")->capture_default_str();
  o->add_option("--levels", op.levels)->capture_default_str();
  o->add_option("--s1", op.guidance.s1)->capture_default_str();
  o->add_option("--s2", op.guidance.s2)->capture_default_str();
  o->add_option("--init", op.init, "pure|warm")->capture_default_str();
  o->add_option("--sampler", op.sampler, "ddim|plms")->capture_default_str();
  o->add_option("--sample-steps", op.sample_steps)->capture_default_str();
  o->add_option("--seed", op.seed)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score predicted videos against ground truth");
  e->add_option("--pred", ev.pred, "corpus file")->required();
  e->add_option("--truth", ev.truth, "corpus file")->required();
  e->add_option("--out", ev.out, "output directory")->required();
  ev.mask.add(*e);
  e->add_option("--seed", ev.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "m3ddm: error: " << ex.what() << '\n';
    return 2;
  }

  try {
    if (g->parsed()) return run_gen_corpus(gen, out);
    if (t->parsed()) return run_train(tr, out);
    if (p->parsed()) return run_plan(pl, out);
    if (o->parsed()) return run_outpaint(op, out);
    if (e->parsed()) return run_eval(ev, out);
  } catch (const std::exception& ex) {
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "m3ddm: error: " << msg << '\n';
    return 1;
  }
  return 1;
}

}  // namespace m3d
