#pragma once

#include "pupiltrack/calibration.hpp"
#include "pupiltrack/count_tensor.hpp"
#include "pupiltrack/decoder.hpp"
#include "pupiltrack/decoder_io.hpp"
#include "pupiltrack/errors.hpp"
#include "pupiltrack/events.hpp"
#include "pupiltrack/network.hpp"
#include "pupiltrack/network_io.hpp"
#include "pupiltrack/neuron.hpp"
#include "pupiltrack/pipeline.hpp"
#include "pupiltrack/protocol.hpp"
#include "pupiltrack/readout.hpp"
#include "pupiltrack/text_io.hpp"
