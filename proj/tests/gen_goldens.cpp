// Regenerates the committed golden fixtures under tests/golden/. Run
// manually after an intentional format change; the golden tests exist to
// catch unintentional ones.
#include <cstdio>
#include <fstream>

#include "pcdc/checkpoint.hpp"
#include "support/golden_inputs.hpp"

int main(int argc, char** argv) {
    std::string dir = argc > 1 ? argv[1] : "tests/golden";
    auto cases = pcdc::test::golden_cases();
    for (size_t i = 0; i < cases.size(); ++i) {
        pcdc::Bitstream bs = pcdc::test::build_golden_bitstream(cases[i]);
        std::string path = dir + "/bitstream_" + std::to_string(i) + ".pcdc";
        pcdc::write_bitstream(bs, path);
        std::printf("%s: %zu bytes\n", path.c_str(), bs.bytes.size());
    }
    auto tensors = pcdc::test::golden_checkpoint_tensors();
    std::string ckpt = dir + "/tiny_model.ckpt";
    pcdc::save_checkpoint(tensors, ckpt);
    std::printf("%s written\n", ckpt.c_str());
    return 0;
}
