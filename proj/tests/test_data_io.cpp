#include <doctest.h>

#include <cstring>
#include <limits>
#include <random>

#include "xret/data_io.hpp"
#include "test_util.hpp"

using namespace xret;
using namespace xret::testing;

namespace {

std::string le32(std::uint32_t v) {
  std::string s;
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  return s;
}

std::string f32(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  return le32(bits);
}

std::string random_string(std::mt19937_64& gen) {
  static const std::string alphabet = "abcXYZ019 _-,\"\\/{}:\t\xc3\xa9";
  std::uniform_int_distribution<std::size_t> len(1, 12), pick(0, alphabet.size() - 1);
  std::string s;
  for (std::size_t i = len(gen); i > 0; --i) {
    const char c = alphabet[pick(gen)];
    if (static_cast<unsigned char>(c) >= 0x80) {
      s += "\xc3\xa9";  // keep UTF-8 valid
    } else {
      s += c;
    }
  }
  return s;
}

Manifest texts_and_images(Manifest& images) {
  images = {{0, "i0", "img", {}, {}}, {1, "i1", "img", {}, {}}};
  return {{0, "t0", "en", "i0", {}}, {1, "t1", "de", "i0", {}}, {2, "t2", "en", "i1", {}},
          {3, "t3", "en", "i1", {}}, {4, "t4", "de", "i1", {}}};
}

Checkpoint random_checkpoint(std::mt19937_64& gen) {
  Checkpoint c;
  c.config = ProjectionConfig::stacked(5, {7, 3}, {0.25, 0.0});
  c.config.relu_flags.back() = false;
  c.loss_config.kind = LossKind::patr;
  c.loss_config.eta = 12.5;
  c.train_config.epochs = 7;
  c.train_config.batch_size = 16;
  c.train_config.seed = 0xfedcba9876543210ULL;
  c.train_config.adam.lr = 3e-4;
  c.train_config.normalize_inputs = true;
  c.train_config.loss = c.loss_config;
  c.epochs_trained = 7;
  c.seed = c.train_config.seed;
  c.weights = init_weights(c.config, gen());
  for (auto& b : c.weights.blocks) {
    b.weight = b.weight.cast<float>().cast<double>();
    b.bias = random_matrix(gen, b.bias.size(), 1).cast<float>().cast<double>();
  }
  return c;
}

}  // namespace

TEST_CASE("embedding file: worked encodings") {
  Matrix m(1, 2);
  m << 3.0, 4.0;
  const std::string bytes = encode_embeddings(EmbeddingSet(m));
  CHECK(bytes == "XEMB" + le32(1) + le32(2) + le32(1) + f32(3.0f) + f32(4.0f));
  CHECK(bytes.size() == 24);
  const EmbeddingSet back = decode_embeddings(bytes);
  CHECK(back.dim() == 2);
  CHECK(back.count() == 1);
  CHECK(back.data == m);

  const std::string empty = encode_embeddings(EmbeddingSet(Matrix(0, 3)));
  CHECK(empty.size() == 16);
  const EmbeddingSet e = decode_embeddings(empty);
  CHECK(e.count() == 0);
  CHECK(e.dim() == 3);
}

TEST_CASE("embedding file: rejects bad input") {
  const std::string good = "XEMB" + le32(1) + le32(2) + le32(1) + f32(3.0f) + f32(4.0f);
  CHECK_THROWS_AS(decode_embeddings("XEMC" + good.substr(4)), DataError);
  CHECK_THROWS_AS(decode_embeddings("XEMB" + le32(2) + good.substr(8)), DataError);
  CHECK_THROWS_AS(decode_embeddings(good.substr(0, 20)), DataError);
  CHECK_THROWS_AS(decode_embeddings(good + "x"), DataError);
  CHECK_THROWS_AS(decode_embeddings(good.substr(0, 10)), DataError);
  const std::string nan = "XEMB" + le32(1) + le32(2) + le32(1) + f32(3.0f) +
                          f32(std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_WITH_AS(decode_embeddings(nan), doctest::Contains("non-finite"), DataError);
  const std::string inf = "XEMB" + le32(1) + le32(1) + le32(1) + f32(std::numeric_limits<float>::infinity());
  CHECK_THROWS_AS(decode_embeddings(inf), DataError);
  CHECK_THROWS_AS(read_embedding_file("/nonexistent/x.xemb"), DataError);
}

TEST_CASE("embedding file: randomized round trip narrows exactly once") {
  const auto dir = scratch_dir("emb");
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> size(0, 40);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = random_matrix(gen, size(gen), 1 + size(gen), std::pow(10.0, trial % 9 - 4));
    const EmbeddingSet set(m);
    write_embedding_file(set, dir / "a.xemb");
    const EmbeddingSet once = read_embedding_file(dir / "a.xemb");
    CHECK(once.data == set.narrowed().data);
    write_embedding_file(once, dir / "b.xemb");
    CHECK(read_embedding_file(dir / "b.xemb").data == once.data);
    CHECK(read_file_bytes(dir / "a.xemb") == read_file_bytes(dir / "b.xemb"));
  }
}

TEST_CASE("manifest: parse, errors and round trip") {
  const auto one = parse_manifest(R"({"row":0,"id":"t0","lang":"en","image_id":"i0"})");
  REQUIRE(one.size() == 1);
  CHECK(one[0] == ManifestRecord{0, "t0", "en", "i0", std::nullopt});

  const std::string dup =
      "{\"row\":0,\"id\":\"a\",\"lang\":\"en\"}\n{\"row\":1,\"id\":\"b\",\"lang\":\"en\"}\n"
      "{\"row\":2,\"id\":\"c\",\"lang\":\"en\"}\n{\"row\":3,\"id\":\"d\",\"lang\":\"en\"}\n"
      "{\"row\":4,\"id\":\"a\",\"lang\":\"en\"}\n";
  CHECK_THROWS_WITH_AS(parse_manifest(dup), doctest::Contains("line 5"), DataError);
  CHECK_THROWS_WITH_AS(parse_manifest("{\"row\":0,\"id\":\"a\",\"lang\":\"en\"}\n{not json\n"),
                       doctest::Contains("line 2"), DataError);
  CHECK_THROWS_AS(parse_manifest(R"({"row":-1,"id":"a","lang":"en"})"), DataError);
  CHECK_THROWS_AS(parse_manifest(R"({"row":0,"lang":"en"})"), DataError);
  CHECK_THROWS_AS(parse_manifest(R"([1,2])"), DataError);
  CHECK(parse_manifest("\n\n").empty());

  std::mt19937_64 gen(4);
  std::uniform_int_distribution<int> coin(0, 1), rows(0, 1000);
  for (int trial = 0; trial < 30; ++trial) {
    Manifest records;
    for (int i = 0; i < 20; ++i) {
      ManifestRecord r{rows(gen), "id" + std::to_string(i) + random_string(gen), random_string(gen), {}, {}};
      if (coin(gen)) r.image_id = random_string(gen);
      if (coin(gen)) r.caption = random_string(gen);
      records.push_back(r);
    }
    CHECK(parse_manifest(format_manifest(records)) == records);
  }
}

TEST_CASE("join_pairs") {
  Manifest images;
  const Manifest texts = texts_and_images(images);
  const EmbeddingSet text_set(Matrix::Random(5, 3));
  const EmbeddingSet image_set(Matrix::Random(2, 4));

  const auto en = join_pairs(text_set, texts, image_set, images, "en");
  REQUIRE(en.pairs.size() == 3);
  CHECK(en.pairs[0] == TextImagePair{0, 0, "en"});
  CHECK(en.pairs[1] == TextImagePair{2, 1, "en"});
  CHECK(en.pairs[2] == TextImagePair{3, 1, "en"});
  CHECK(en.image_id_of.at(3) == "i1");
  CHECK(en.image_id_of.count(1) == 0);

  const auto all = join_pairs(text_set, texts, image_set, images, std::nullopt);
  CHECK(all.pairs.size() == 5);
  CHECK(all.pairs[1].image_row == all.pairs[0].image_row);
  CHECK(all.text_embeddings.data == text_set.data);

  auto missing = texts;
  missing[1].image_id.reset();
  CHECK_THROWS_WITH_AS(join_pairs(text_set, missing, image_set, images, "en"), doctest::Contains("t1"), DataError);
  auto unknown = texts;
  unknown[2].image_id = "i9";
  CHECK_THROWS_WITH_AS(join_pairs(text_set, unknown, image_set, images, "en"), doctest::Contains("i9"), DataError);
  auto out_of_range = texts;
  out_of_range[4].row = 5;
  CHECK_THROWS_AS(join_pairs(text_set, out_of_range, image_set, images, std::nullopt), DataError);
  auto bad_image = images;
  bad_image[1].row = 2;
  CHECK_THROWS_AS(join_pairs(text_set, texts, image_set, bad_image, std::nullopt), DataError);
}

TEST_CASE("checkpoint: round trip is bit exact for f32-representable weights") {
  const auto dir = scratch_dir("ckpt");
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Checkpoint c = random_checkpoint(gen);
    save_checkpoint(c, dir / "c.xckp");
    const Checkpoint back = load_checkpoint(dir / "c.xckp");
    CHECK(back == c);
    CHECK(encode_checkpoint(back) == encode_checkpoint(c));
    CHECK(checkpoint_fingerprint(back) == checkpoint_fingerprint(c));
  }
}

TEST_CASE("checkpoint: f64 weights narrow once then stay fixed") {
  std::mt19937_64 gen(10);
  Checkpoint c = random_checkpoint(gen);
  c.weights.blocks[0].weight(0, 0) = 0.1;  // not representable in f32
  const Checkpoint once = decode_checkpoint(encode_checkpoint(c));
  CHECK_FALSE(once == c);
  CHECK(once.weights.blocks[0].weight(0, 0) == static_cast<double>(0.1f));
  CHECK(decode_checkpoint(encode_checkpoint(once)) == once);
}

TEST_CASE("checkpoint: corrupt files are rejected") {
  std::mt19937_64 gen(11);
  const std::string bytes = encode_checkpoint(random_checkpoint(gen));
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 20)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + std::string(4, '\0')), DataError);
  CHECK_THROWS_AS(decode_checkpoint("XCKQ" + bytes.substr(4)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 4) + le32(7) + bytes.substr(8)), DataError);

  // Header says the first layer is 7x5; claim 6x5 instead, keeping the header length.
  std::string tampered = bytes;
  const auto pos = tampered.find("\"out\":7");
  REQUIRE(pos != std::string::npos);
  tampered[pos + 6] = '6';
  CHECK_THROWS_WITH_AS(decode_checkpoint(tampered), doctest::Contains("shape"), DataError);
}
