#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "iqb/error.hpp"
#include "iqb/image_io.hpp"
#include "iqb/jpeg.hpp"
#include "iqb/modifiers.hpp"
#include "iqb/quality.hpp"
#include "iqb/resize.hpp"
#include "iqb/synthetic.hpp"
#include "oracles.hpp"

using namespace iqb;
namespace fs = std::filesystem;
using oracle::kAnnexKChroma;
using oracle::kAnnexKLuma;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

data::Dataset small_corpus(const fs::path& root, int images = 2, int size = 128) {
  synthetic::CorpusOptions opt;
  opt.name = "fixture";
  opt.images_per_partition = images;
  opt.scene.width = opt.scene.height = size;
  return synthetic::write_corpus(root, opt);
}

}  // namespace

TEST(Spec, NamesAndValidation) {
  EXPECT_EQ(ModifierSpec::identity().name(), "identity");
  EXPECT_EQ(ModifierSpec::jpeg(70).name(), "jpeg_q70");
  EXPECT_EQ(ModifierSpec::jpeg(70, ChromaSubsampling::k444).name(), "jpeg_q70_444");
  EXPECT_EQ(ModifierSpec::resize(0.5).name(), "resize_x0.5_bilinear");
  EXPECT_NO_THROW(ModifierSpec::jpeg(0).validate());
  EXPECT_THROW(ModifierSpec::jpeg(101).validate(), InvalidArgument);
  EXPECT_THROW(ModifierSpec::jpeg(-1).validate(), InvalidArgument);
  EXPECT_THROW(ModifierSpec::resize(0.0).validate(), InvalidArgument);
  EXPECT_THROW(ModifierSpec::resize(1.5).validate(), InvalidArgument);
  EXPECT_NE(ModifierSpec::jpeg(70), ModifierSpec::jpeg(71));
}

TEST(Quantization, BaseTablesAreAnnexK) {
  EXPECT_EQ(jpeg::base_luma_table(), kAnnexKLuma);
  EXPECT_EQ(jpeg::base_chroma_table(), kAnnexKChroma);
}

TEST(Quantization, EncodedStreamCarriesScaledTables) {
  const auto scene = synthetic::make_scene(3);
  for (int q : {50, 80}) {
    const auto dqt = oracle::read_dqt(jpeg::encode(scene.image, {.quality = q}));
    ASSERT_EQ(dqt.size(), 2u);
    EXPECT_EQ(dqt.at(0), jpeg::scale_table(kAnnexKLuma, q));
    EXPECT_EQ(dqt.at(1), jpeg::scale_table(kAnnexKChroma, q));
  }
  const auto q50 = oracle::read_dqt(jpeg::encode(scene.image, {.quality = 50}));
  EXPECT_EQ(q50.at(0), kAnnexKLuma);
  EXPECT_EQ(q50.at(1), kAnnexKChroma);
}

TEST(Quantization, ScalingRule) {
  EXPECT_EQ(jpeg::quality_scale_factor(50), 100);
  EXPECT_EQ(jpeg::quality_scale_factor(10), 500);
  EXPECT_EQ(jpeg::quality_scale_factor(100), 0);
  EXPECT_EQ(jpeg::quality_scale_factor(0), 5000);  // q=0 behaves as q=1
  EXPECT_EQ(jpeg::scale_table(kAnnexKLuma, 50), kAnnexKLuma);
  EXPECT_EQ(jpeg::scale_table(kAnnexKChroma, 50), kAnnexKChroma);
  const auto q100 = jpeg::scale_table(kAnnexKLuma, 100);
  EXPECT_TRUE(std::all_of(q100.begin(), q100.end(), [](auto v) { return v == 1; }));
  for (int q : {1, 10, 25, 49, 51, 75, 90}) {
    const int s = q < 50 ? 5000 / q : 200 - 2 * q;
    const auto t = jpeg::scale_table(kAnnexKLuma, q);
    for (std::size_t i = 0; i < 64; ++i) {
      const long v = std::clamp<long>((kAnnexKLuma[i] * s + 50) / 100, 1, 255);
      ASSERT_EQ(t[i], v) << "q " << q << " entry " << i;
    }
  }
}

TEST(Encoder, DecodesWithMatchingGeometry) {
  for (auto [w, h, ch] : {std::tuple{64, 64, 3}, {37, 23, 3}, {17, 41, 1}, {1, 1, 3}}) {
    const auto scene = synthetic::make_scene(5, {std::max(w, 16), std::max(h, 16), ch, 3, 2.0});
    Image8 img(w, h, ch);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < ch; ++c) img.at(x, y, c) = scene.image.at(x, y, c);
      }
    }
    for (auto chroma : {ChromaSubsampling::k420, ChromaSubsampling::k444}) {
      const auto bytes = jpeg::encode(img, {90, chroma});
      ASSERT_EQ(sniff_format(bytes), ImageFormat::kJpeg);
      const auto back = decode_image(bytes);
      EXPECT_EQ(back.width(), w);
      EXPECT_EQ(back.height(), h);
      EXPECT_EQ(back.channels(), ch);
      EXPECT_GT(quality::psnr(img, back), 30.0) << w << "x" << h << "x" << ch;
    }
  }
}

TEST(Encoder, HigherQualityIsLargerAndCloser) {
  const auto scene = synthetic::make_scene(2, {192, 192, 3, 10, 2.0});
  std::size_t prev_size = 0;
  double prev_psnr = 0;
  for (int q : {10, 30, 50, 70, 90, 100}) {
    const auto bytes = jpeg::encode(scene.image, {q, ChromaSubsampling::k420});
    const double p = quality::psnr(scene.image, decode_image(bytes));
    EXPECT_GT(bytes.size(), prev_size) << "q " << q;
    EXPECT_GT(p, prev_psnr) << "q " << q;
    prev_size = bytes.size();
    prev_psnr = p;
  }
  EXPECT_GE(prev_psnr, 45.0);
}

TEST(Encoder, RejectsUnsupportedChannels) {
  EXPECT_THROW(jpeg::encode(Image8(8, 8, 2), {}), InvalidArgument);
  EXPECT_THROW(jpeg::encode(Image8(8, 8, 4), {}), InvalidArgument);
}

TEST(Encoder, Deterministic) {
  const auto scene = synthetic::make_scene(3, {96, 96, 3, 5, 2.0});
  EXPECT_EQ(jpeg::encode(scene.image, {75, ChromaSubsampling::k420}),
            jpeg::encode(scene.image, {75, ChromaSubsampling::k420}));
}

TEST(Resize, IdentityScaleNearestIsExact) {
  const auto scene = synthetic::make_scene(4, {64, 48, 3, 4, 2.0});
  EXPECT_EQ(resize_interpolate(scene.image, 1.0, Interpolation::kNearest), scene.image);
}

TEST(Resize, ConstantStaysConstant) {
  const Image8 flat(40, 30, 3, 93);
  for (auto m : {Interpolation::kNearest, Interpolation::kBilinear, Interpolation::kBicubic}) {
    for (double s : {1.0, 0.75, 0.5, 0.13}) {
      const auto out = resize_interpolate(flat, s, m);
      EXPECT_EQ(out.width(), std::max(1, static_cast<int>(40 * s)));
      EXPECT_EQ(out, Image8(out.width(), out.height(), 3, 93));
    }
  }
}

TEST(Resize, CheckerboardAveragesToMidGray) {
  Image8 board(4, 4, 1);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) board.at(x, y) = (x + y) % 2 ? 255 : 0;
  }
  const auto out = resize_interpolate(board, 0.5, Interpolation::kBilinear);
  ASSERT_EQ(out.width(), 2);
  ASSERT_EQ(out.height(), 2);
  for (auto v : out.data()) {
    EXPECT_EQ(v, out.data()[0]);
    EXPECT_NEAR(v, 127.5, 0.5);
  }
}

TEST(Resize, StaysWithinSourceRange) {
  Image8 img(32, 32, 1, 50);
  for (int y = 0; y < 32; ++y) {
    for (int x = 16; x < 32; ++x) img.at(x, y) = 200;
  }
  const auto out = resize_interpolate(img, 0.7, Interpolation::kBicubic);
  for (auto v : out.data()) {
    EXPECT_GE(v, 50);
    EXPECT_LE(v, 200);
  }
}

TEST(Resize, TinyScaleClampsToOnePixel) {
  const auto out = resize_interpolate(Image8(10, 10, 1, 5), 0.01, Interpolation::kBilinear);
  EXPECT_EQ(out.width(), 1);
  EXPECT_EQ(out.height(), 1);
  EXPECT_THROW(resize_interpolate(Image8(10, 10, 1), 0.0, Interpolation::kBilinear), InvalidArgument);
}

TEST(Modifiers, IdentityKeepsBytesAndAnnotations) {
  oracle::TempDir dir("identity");
  const auto ds = small_corpus(dir / "src");
  const auto v = modifiers::apply_modifier(ds, ModifierSpec::identity(), {dir / "out", true, 1});
  for (const auto& [name, part] : ds.partitions) {
    const auto& out = v.dataset.partition(name);
    ASSERT_EQ(out.size(), part.size());
    for (std::size_t i = 0; i < part.size(); ++i) {
      EXPECT_EQ(slurp(out[i].path), slurp(part[i].path));
      EXPECT_EQ(slurp(out[i].annotation_path), slurp(part[i].annotation_path));
      EXPECT_EQ(out[i].byte_size, part[i].byte_size);
    }
  }
  std::vector<data::ImageEntry> all;
  for (const auto& [n, p] : ds.partitions) all.insert(all.end(), p.begin(), p.end());
  EXPECT_DOUBLE_EQ(v.avg_size_mb, data::avg_file_size_mb(all));
  EXPECT_EQ(v.dataset.name, "fixture@identity");
  EXPECT_EQ(v.dataset.provenance.size(), 1u);
}

TEST(Modifiers, JpegKeepsAnnotationsByteIdentical) {
  oracle::TempDir dir("jpeg");
  const auto ds = small_corpus(dir / "src");
  const auto v = modifiers::apply_modifier(ds, ModifierSpec::jpeg(40), {dir / "out", true, 2});
  for (const auto& [name, part] : ds.partitions) {
    const auto& out = v.dataset.partition(name);
    for (std::size_t i = 0; i < part.size(); ++i) {
      EXPECT_EQ(out[i].path.extension(), ".jpg");
      EXPECT_EQ(out[i].path, dir / "out" / "jpeg_q40" / name / (part[i].id + ".jpg"));
      EXPECT_EQ(slurp(out[i].annotation_path), slurp(part[i].annotation_path));
      EXPECT_EQ(out[i].byte_size, fs::file_size(out[i].path));
    }
    double sum = 0;
    for (const auto& e : out) sum += static_cast<double>(fs::file_size(e.path));
    EXPECT_NEAR(v.partition_avg_size_mb.at(name), sum / out.size() / 1e6, 1e-15);
  }
  // Reloaded variant matches what was returned.
  const auto back = modifiers::load_modified_dataset(dir / "out" / "jpeg_q40");
  EXPECT_EQ(back.spec, ModifierSpec::jpeg(40));
  EXPECT_DOUBLE_EQ(back.avg_size_mb, v.avg_size_mb);
  EXPECT_EQ(back.dataset.partition("test").size(), ds.partition("test").size());
}

TEST(Modifiers, IdentityThenJpegEqualsJpeg) {
  oracle::TempDir dir("chain");
  const auto ds = small_corpus(dir / "src", 1);
  const auto direct = modifiers::apply_modifier(ds, ModifierSpec::jpeg(60), {dir / "a", true, 1});
  const auto id = modifiers::apply_modifier(ds, ModifierSpec::identity(), {dir / "b", true, 1});
  const auto chained = modifiers::apply_modifier(id.dataset, ModifierSpec::jpeg(60), {dir / "c", true, 1});
  for (const auto& [name, part] : direct.dataset.partitions) {
    for (std::size_t i = 0; i < part.size(); ++i) {
      EXPECT_EQ(slurp(part[i].path), slurp(chained.dataset.partition(name)[i].path));
    }
  }
  EXPECT_EQ(chained.dataset.provenance.size(), 2u);
}

TEST(Modifiers, ResizeScalesImagesAndAnnotations) {
  oracle::TempDir dir("resize");
  const auto ds = small_corpus(dir / "src", 1, 128);
  const auto v = modifiers::apply_modifier(ds, ModifierSpec::resize(0.5), {dir / "out", true, 1});
  const auto& src = ds.partition("test")[0];
  const auto& out = v.dataset.partition("test")[0];
  EXPECT_EQ(out.width, 64);
  EXPECT_EQ(out.height, 64);
  const auto img = load_image(out.path);
  EXPECT_EQ(img.width(), 64);
  ASSERT_EQ(out.annotations.size(), src.annotations.size());
  for (std::size_t k = 0; k < src.annotations.size(); ++k) {
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_DOUBLE_EQ(out.annotations[k].quad[i].x, src.annotations[k].quad[i].x * 0.5);
      EXPECT_DOUBLE_EQ(out.annotations[k].quad[i].y, src.annotations[k].quad[i].y * 0.5);
    }
  }
}

TEST(Modifiers, StrictAndLenientFailureHandling) {
  oracle::TempDir dir("broken");
  auto ds = small_corpus(dir / "src", 2, 64);
  const auto broken = ds.partitions["train"][0].path;
  std::ofstream(broken, std::ios::binary | std::ios::trunc) << "not an image";
  EXPECT_THROW(modifiers::apply_modifier(ds, ModifierSpec::jpeg(50), {dir / "strict", true, 1}),
               Error);
  const auto v = modifiers::apply_modifier(ds, ModifierSpec::jpeg(50), {dir / "lenient", false, 1});
  ASSERT_EQ(v.failures.size(), 1u);
  EXPECT_EQ(v.failures[0].image_id, ds.partitions["train"][0].id);
  EXPECT_EQ(v.dataset.partition("train").size(), 1u);
  EXPECT_EQ(v.dataset.partition("test").size(), 2u);
}

TEST(Modifiers, SweepIsOrderedAndMonotone) {
  oracle::TempDir dir("sweep");
  const auto ds = small_corpus(dir / "src", 2, 128);
  const std::vector<int> qs = {95, 70, 10};
  const auto variants = modifiers::sweep(ds, qs, {dir / "out", true, 0});
  ASSERT_EQ(variants.size(), 3u);
  EXPECT_EQ(variants[0].spec, ModifierSpec::jpeg(95));
  EXPECT_GT(variants[0].avg_size_mb, variants[1].avg_size_mb);
  EXPECT_GT(variants[1].avg_size_mb, variants[2].avg_size_mb);
  EXPECT_THROW(modifiers::sweep(ds, std::vector<int>{50, 120}, {dir / "bad", true, 0}),
               InvalidArgument);
}

TEST(Modifiers, RematerializationIsByteStable) {
  oracle::TempDir dir("stable");
  const auto ds = small_corpus(dir / "src", 2, 96);
  const auto a = modifiers::apply_modifier(ds, ModifierSpec::jpeg(75), {dir / "a", true, 1});
  const auto b = modifiers::apply_modifier(ds, ModifierSpec::jpeg(75), {dir / "b", true, 3});
  for (const auto& [name, part] : a.dataset.partitions) {
    for (std::size_t i = 0; i < part.size(); ++i) {
      EXPECT_EQ(part[i].byte_size, b.dataset.partition(name)[i].byte_size);
    }
  }
}
