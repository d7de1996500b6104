#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "dvp/data.hpp"

using namespace dvp;

int main(int argc, char** argv) {
  CLI::App app{"write a deterministic synthetic image corpus in IDX format"};
  std::string out_dir = "data/synth";
  std::string mode = "scenes";
  int train_n = 12000, test_n = 2000, side = 28;
  uint64_t seed = 1234;
  app.add_option("--out", out_dir);
  app.add_option("--mode", mode, "scenes (training corpus) or shapes (enumerable)");
  app.add_option("--train", train_n);
  app.add_option("--test", test_n);
  app.add_option("--side", side);
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out_dir);
    auto gen = [&](int count, uint64_t s) {
      return mode == "shapes" ? synthetic_shapes(count, side, s)
                              : synthetic_scenes(count, side, s);
    };
    Dataset train = gen(train_n, seed);
    Dataset test = gen(test_n, seed + 1);
    write_idx(out_dir + "/train-images-idx3-ubyte", train);
    write_idx(out_dir + "/t10k-images-idx3-ubyte", test);
    std::cout << "wrote " << train.count << " train / " << test.count
              << " test images (side " << side << ", digest " << train.digest
              << ") under " << out_dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
