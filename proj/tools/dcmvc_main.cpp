#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcmvc/codec.hpp"
#include "dcmvc/common.hpp"
#include "dcmvc/dataset.hpp"
#include "dcmvc/evaluation.hpp"
#include "dcmvc/png_io.hpp"
#include "dcmvc/svg_plot.hpp"
#include "dcmvc/training.hpp"
#include "dcmvc/video_io.hpp"

namespace fs = std::filesystem;
using namespace dcmvc;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  DCMVC_CHECK(in.good(), "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const void* data, size_t n) {
  std::ofstream out(path, std::ios::binary);
  DCMVC_CHECK(out.good(), "cannot open " + path + " for writing");
  out.write(static_cast<const char*>(data), std::streamsize(n));
  DCMVC_CHECK(out.good(), "write failed for " + path);
}

ClipSpec clip_spec_from(const TrainConfig& cfg, int frames) {
  ClipSpec spec;
  spec.frames = frames;
  spec.height = cfg.crop;
  spec.width = cfg.crop;
  spec.sprites = cfg.sprites;
  spec.max_speed = cfg.max_speed;
  spec.noise = cfg.noise;
  return spec;
}

struct TrainArgs {
  std::string config, out;
  uint64_t seed = 0;
  bool seed_set = false;
};

void run_train(const TrainArgs& a) {
  TrainConfig cfg = train_config_from_json(read_file(a.config));
  if (a.seed_set) cfg.seed = a.seed;

  const auto corpus = make_corpus(cfg.seed, cfg.corpus_clips,
                                  clip_spec_from(cfg, cfg.frames_per_clip));
  CodecModel model(model_config_from(cfg), cfg.seed);

  const std::string log_path = a.out + ".log.csv";
  std::ofstream log(log_path);
  DCMVC_CHECK(log.good(), "cannot open " + log_path + " for writing");
  const TrainResult r = train_cascaded(model, corpus, cfg, log);
  model.save(a.out);
  std::printf("trained %d warmup + %d steps, final mean total %.4f\n", r.warmup_steps,
              r.steps, r.final_total);
  std::printf("checkpoint: %s\nlog: %s\n", a.out.c_str(), log_path.c_str());
}

struct IoArgs {
  std::string model, input, out, stream, ref, trace, summary;
  int frames = 96, intra_period = 32, width = 0, height = 0, frame = 1;
};

std::vector<Tensor> ingest_frames(const IoArgs& a, const std::string& path, int count) {
  Sequence seq = ingest(path, count, a.width, a.height);
  DCMVC_CHECK(count <= 0 || int(seq.frames.size()) >= count,
              path + " has only " + std::to_string(seq.frames.size()) +
                  " frames, need " + std::to_string(count));
  return std::move(seq.frames);
}

void run_encode(const IoArgs& a) {
  DCMVC_CHECK(a.intra_period == -1 || a.intra_period >= 1,
              "--intra-period must be -1 or a positive integer");
  CodecModel model = CodecModel::from_checkpoint(a.model);
  const auto frames = ingest_frames(a, a.input, a.frames);
  const EncodeResult enc = encode_sequence(model, frames, a.intra_period);
  write_file(a.out, enc.bytes.data(), enc.bytes.size());

  double bits = 0;
  for (const auto& s : enc.stats) bits += s.bpp;
  std::printf("encoded %zu frames %dx%d -> %zu bytes (mean %.4f bpp)\n", frames.size(),
              frames[0].shape()[2], frames[0].shape()[1], enc.bytes.size(),
              bits / double(enc.stats.size()));
}

void run_decode(const IoArgs& a) {
  CodecModel model = CodecModel::from_checkpoint(a.model);
  const std::string data = read_file(a.input);
  const DecodeResult dec = decode_stream(
      model, std::vector<uint8_t>(data.begin(), data.end()));
  fs::create_directories(a.out);
  for (size_t t = 0; t < dec.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05zu.png", t);
    write_png_rgb((fs::path(a.out) / name).string(), dec.frames[t]);
  }
  std::printf("decoded %zu frames %dx%d into %s\n", dec.frames.size(), dec.header.width,
              dec.header.height, a.out.c_str());
}

void run_eval(const IoArgs& a) {
  CodecModel model = CodecModel::from_checkpoint(a.model);
  const std::string data = read_file(a.stream);
  const auto refs = ingest_frames(a, a.ref, 0);
  const EvalResult ev =
      eval_sequence(model, std::vector<uint8_t>(data.begin(), data.end()), refs);

  const std::string csv = trace_csv(ev.trace);
  write_file(a.trace, csv.data(), csv.size());
  const std::string js = summary_json(fs::path(a.stream).filename().string(), ev.summary);
  write_file(a.summary, js.data(), js.size());
  std::printf("%zu frames: %.4f bpp, %.2f dB\n", ev.trace.size(), ev.summary.bpp,
              ev.summary.psnr_db);
}

void run_bdrate(const std::string& anchor, const std::string& test) {
  const auto a = parse_rd_csv(read_file(anchor));
  const auto t = parse_rd_csv(read_file(test));
  std::printf("%.4f\n", bd_rate(a, t));
}

void run_trace_plot(const std::string& trace, const std::string& out) {
  const auto rows = parse_trace_csv(read_file(trace));
  const std::string svg = render_trace_svg(rows);
  write_file(out, svg.data(), svg.size());
  std::printf("wrote %s\n", out.c_str());
}

void run_dump_context(const IoArgs& a) {
  DCMVC_CHECK(a.frame >= 1, "--frame must be >= 1 (frame 0 is the I-frame)");
  CodecModel model = CodecModel::from_checkpoint(a.model);
  const auto frames = ingest_frames(a, a.input, a.frame + 1);
  const int h = frames[0].shape()[1], w = frames[0].shape()[2];

  // run the chain up to the requested frame, then one open forward pass
  PropagationState state = refresh_state(model, frames[0]);
  for (int t = 1; t < a.frame; ++t)
    state = [&] {
      PFrameResult r = encode_p_frame(model, pad_to_multiple(frames[size_t(t)], 16), state);
      return PropagationState{std::move(r.recon), std::move(r.feature)};
    }();

  Graph g;
  Binder b(g, model.params(), false);
  const NodeId x_t = g.leaf(pad_to_multiple(frames[size_t(a.frame)], 16));
  const NodeId rf = g.leaf(state.ref_frame);
  const NodeId ff = g.leaf(state.ref_feature);
  const PFrameNodes n = model.p_frame_forward(b, x_t, rf, ff);

  fs::create_directories(a.out);
  auto put = [&](const char* name, NodeId id, void (*writer)(const std::string&, const Tensor&)) {
    if (id == kNoNode) return;
    writer((fs::path(a.out) / name).string(), g.value(id));
  };
  auto crop_frame = [&](NodeId id) { return crop_top_left(g.value(id), h, w); };

  write_png_rgb((fs::path(a.out) / "frame.png").string(), frames[size_t(a.frame)]);
  write_png_rgb((fs::path(a.out) / "recon.png").string(), crop_frame(n.x_hat));
  write_png_rgb((fs::path(a.out) / "pred_frame.png").string(), crop_frame(n.x_pred));
  if (n.x_warp_orient != kNoNode)
    write_png_rgb((fs::path(a.out) / "warp_orient.png").string(), crop_frame(n.x_warp_orient));
  put("flow_v.png", n.v, write_png_flow);
  put("flow_v_hat.png", n.v_hat, write_png_flow);
  put("flow_v_orient.png", n.v_orient, write_png_flow);
  put("ctx_c0.png", n.ctx.c0, write_png_heatmap);
  put("ctx_c0_orient.png", n.c0_orient, write_png_heatmap);
  put("ctx_c0_bar.png", n.c0_bar, write_png_heatmap);
  put("feat_g_prop.png", n.dec.g_prop, write_png_heatmap);
  put("feat_g_orient.png", n.dec.g_orient, write_png_heatmap);
  put("feat_l_prop.png", n.dec.l_prop, write_png_heatmap);
  put("feat_l_orient.png", n.dec.l_orient, write_png_heatmap);
  std::printf("wrote context dumps for frame %d into %s\n", a.frame, a.out.c_str());
}

struct AblateArgs {
  std::string config, variants = "ma,mb,mc,md,me", out;
  uint64_t seed = 0;
  bool seed_set = false;
};

struct VariantDef {
  bool orientation;
  const char* comp;
  bool decouple;
};

VariantDef variant_def(const std::string& name) {
  if (name == "ma") return {false, "off", false};
  if (name == "mb") return {true, "concat", false};
  if (name == "mc") return {false, "full", false};
  if (name == "md") return {true, "full", false};
  if (name == "me") return {true, "full", true};
  fail("unknown variant `" + name + "` (expected ma,mb,mc,md,me)");
}

void run_ablate(const AblateArgs& a) {
  TrainConfig base = train_config_from_json(read_file(a.config));
  if (a.seed_set) base.seed = a.seed;

  std::vector<std::string> names;
  std::stringstream vs(a.variants);
  std::string tok;
  while (std::getline(vs, tok, ',')) {
    if (!tok.empty()) names.push_back(tok);
  }
  DCMVC_CHECK(!names.empty(), "--variants is empty");
  for (const auto& nm : names) variant_def(nm);

  fs::create_directories(a.out);
  const auto corpus =
      make_corpus(base.seed, base.corpus_clips, clip_spec_from(base, base.frames_per_clip));

  // held-out sequences shared by every variant
  constexpr int kEvalSeqs = 3, kEvalFrames = 96;
  std::vector<std::vector<Tensor>> eval_seqs;
  for (int i = 0; i < kEvalSeqs; ++i) {
    Rng er(base.seed * 7919 + 9001 + uint64_t(i));
    eval_seqs.push_back(make_clip(er, clip_spec_from(base, kEvalFrames)));
  }

  std::string table = "variant,orientation,compensation,decouple_loss,bpp,psnr_db,rd_cost\n";
  std::printf("variant  orient  comp    decouple     bpp    psnr_db    rd_cost\n");
  for (const auto& nm : names) {
    const VariantDef vd = variant_def(nm);
    TrainConfig cfg = base;
    cfg.orientation = vd.orientation;
    cfg.compensation_mode = vd.comp;
    cfg.decouple_loss = vd.decouple;

    CodecModel model(model_config_from(cfg), cfg.seed);
    std::ofstream log((fs::path(a.out) / (nm + ".log.csv")).string());
    train_cascaded(model, corpus, cfg, log);
    model.save((fs::path(a.out) / (nm + ".ckpt")).string());

    double mse = 0, bpp = 0;
    int frames = 0;
    for (const auto& seq : eval_seqs) {
      const EncodeResult enc = encode_sequence(model, seq, -1);
      for (const auto& s : enc.stats) {
        mse += s.mse;
        bpp += s.bpp;
        ++frames;
      }
    }
    mse /= double(frames);
    bpp /= double(frames);
    const double rd = double(cfg.base_lambda) * mse + bpp;
    const double pd = psnr_from_mse(mse);

    char row[256];
    std::snprintf(row, sizeof(row), "%s,%d,%s,%d,%.6f,%.4f,%.6f\n", nm.c_str(),
                  vd.orientation ? 1 : 0, vd.comp, vd.decouple ? 1 : 0, bpp, pd, rd);
    table += row;
    std::printf("%-8s %-7d %-7s %-9d %8.4f %9.3f %10.4f\n", nm.c_str(),
                vd.orientation ? 1 : 0, vd.comp, vd.decouple ? 1 : 0, bpp, pd, rd);
    std::fflush(stdout);
  }
  const std::string table_path = (fs::path(a.out) / "ablation.csv").string();
  write_file(table_path, table.data(), table.size());
  std::printf("table: %s\n", table_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trainable conditional video codec with context modulation"};
  app.require_subcommand(1);
  app.failure_message([](const CLI::App*, const CLI::Error& e) {
    return std::string("error: ") + e.what() + "\n";
  });

  bool deterministic = true;
  app.add_flag("--deterministic,!--no-deterministic", deterministic,
               "disable non-deterministic kernels (always on; all kernels here "
               "are deterministic and single-threaded)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model on the procedural corpus");
  train->add_option("--config", ta.config, "TrainConfig JSON")->required();
  train->add_option("--out", ta.out, "checkpoint output path")->required();
  auto* tseed = train->add_option("--seed", ta.seed, "override the config seed");

  IoArgs ea;
  auto* enc = app.add_subcommand("encode", "encode a video into a .dcmv stream");
  enc->add_option("--model", ea.model, "model checkpoint")->required();
  enc->add_option("--input", ea.input, ".y4m, .yuv/.raw, or a PNG directory")->required();
  enc->add_option("--frames", ea.frames, "frame count to encode (default 96)");
  enc->add_option("--intra-period", ea.intra_period,
                  "I-frame interval; -1 = single leading I-frame (default 32)");
  enc->add_option("--out", ea.out, "output stream path")->required();
  enc->add_option("--width", ea.width, "width for raw .yuv input");
  enc->add_option("--height", ea.height, "height for raw .yuv input");

  IoArgs da;
  auto* dec = app.add_subcommand("decode", "decode a .dcmv stream to PNG frames");
  dec->add_option("--model", da.model, "model checkpoint")->required();
  dec->add_option("--input", da.input, ".dcmv stream")->required();
  dec->add_option("--out", da.out, "output PNG directory")->required();

  IoArgs va;
  auto* ev = app.add_subcommand("eval", "score a stream against its source");
  ev->add_option("--model", va.model, "model checkpoint")->required();
  ev->add_option("--stream", va.stream, ".dcmv stream")->required();
  ev->add_option("--ref", va.ref, "original source video")->required();
  ev->add_option("--trace", va.trace, "per-frame trace CSV output")->required();
  ev->add_option("--summary", va.summary, "summary JSON output")->required();
  ev->add_option("--width", va.width, "width for raw .yuv refs");
  ev->add_option("--height", va.height, "height for raw .yuv refs");

  std::string bd_anchor, bd_test;
  auto* bd = app.add_subcommand("bdrate", "BD-rate percent between two RD CSV curves");
  bd->add_option("--anchor", bd_anchor, "anchor curve CSV (bpp,psnr_db lines)")->required();
  bd->add_option("--test", bd_test, "test curve CSV")->required();

  std::string tp_trace, tp_out;
  auto* tp = app.add_subcommand("trace-plot", "render a trace CSV as an SVG chart");
  tp->add_option("--trace", tp_trace, "trace CSV from eval")->required();
  tp->add_option("--out", tp_out, "SVG output path")->required();

  IoArgs ca;
  auto* dc = app.add_subcommand("dump-context", "write modulation heatmaps for one frame");
  dc->add_option("--model", ca.model, "model checkpoint")->required();
  dc->add_option("--input", ca.input, "source video")->required();
  dc->add_option("--frame", ca.frame, "P-frame index to dump (>= 1)")->required();
  dc->add_option("--out", ca.out, "output directory")->required();
  dc->add_option("--width", ca.width, "width for raw .yuv input");
  dc->add_option("--height", ca.height, "height for raw .yuv input");

  AblateArgs aa;
  auto* ab = app.add_subcommand("ablate", "train and compare model variants");
  ab->add_option("--config", aa.config, "base TrainConfig JSON")->required();
  ab->add_option("--variants", aa.variants, "comma list from ma,mb,mc,md,me");
  ab->add_option("--out", aa.out, "output directory")->required();
  auto* aseed = ab->add_option("--seed", aa.seed, "override the config seed");

  CLI11_PARSE(app, argc, argv);
  ta.seed_set = tseed->count() > 0;
  aa.seed_set = aseed->count() > 0;

  try {
    if (train->parsed()) run_train(ta);
    else if (enc->parsed()) run_encode(ea);
    else if (dec->parsed()) run_decode(da);
    else if (ev->parsed()) run_eval(va);
    else if (bd->parsed()) run_bdrate(bd_anchor, bd_test);
    else if (tp->parsed()) run_trace_plot(tp_trace, tp_out);
    else if (dc->parsed()) run_dump_context(ca);
    else if (ab->parsed()) run_ablate(aa);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
