// Procedural demo corpus generator: four seeded patterns, one folder per
// class, in the layout `dstk clean` expects.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "dstk/errors.hpp"
#include "dstk/synth.hpp"

int main(int argc, char** argv) {
    CLI::App app{"four-class synthetic image corpus generator"};
    std::string root;
    int per_class = 50;
    int size = 64;
    uint64_t seed = 0;
    app.add_option("root", root, "corpus root directory")->required();
    app.add_option("--per-class", per_class, "images per class")->check(CLI::PositiveNumber);
    app.add_option("--size", size, "square image size")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        int n = dstk::write_synth_corpus(root, per_class, size, seed);
        std::printf("wrote %d images under %s\n", n, root.c_str());
    } catch (const dstk::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const dstk::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    }
    return 0;
}
