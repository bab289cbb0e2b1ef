// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#include "mfa/cli.hpp"

int main(int argc, char** argv) { return mfa::cli::run(argc, argv); }
