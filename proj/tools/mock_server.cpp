// Serves an exact tabular joint over the line protocol on stdin/stdout.
#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "mdlm/models.hpp"
#include "mdlm/remote.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Wire-protocol server backed by an exact joint table"};
    std::string joint;
    app.add_option("--joint", joint, "Exact joint model JSON")->required();
    CLI11_PARSE(app, argc, argv);

    try {
        const auto model = mdlm::ExactJointModel::load(joint);
        const mdlm::wire::FrameServer server(model);
        std::string line;
        while (std::getline(std::cin, line)) {
            std::cout << server.handle(line) << '\n' << std::flush;
        }
    } catch (const std::exception& e) {
        std::cerr << "mdlm_mock_server: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
