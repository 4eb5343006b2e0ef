"""Talk to a backend over HTTP exactly the way the pipeline does.

Starts the scripted mock server in a thread, posts an interpolation
request against it, and walks the response. Swap MockBackend for a
SceneBank (see posecraft.cli serve-mock --scene-bank) to serve real
synthetic geometry instead.
"""

import threading

import numpy as np
import requests

from posecraft.backends import (InterpolateRequest, InterpolateResponse,
                                MockBackend, decode_png_gray, dumps_canonical,
                                encode_png_gray, loads_wire, make_server)

y, x = np.mgrid[0:48, 0:64]
start = encode_png_gray((x * 4 % 256).astype(np.uint8))
end = encode_png_gray((y * 5 % 256).astype(np.uint8))

server = make_server(MockBackend(), port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
port = server.server_address[1]
print(f"mock backend listening on 127.0.0.1:{port}")

request = InterpolateRequest(start_image=start, end_image=end,
                             frame_count=6, prompt="pan down")
resp = requests.post(f"http://127.0.0.1:{port}/v1/interpolate",
                     data=dumps_canonical(request.to_wire()), timeout=10)
resp.raise_for_status()

answer = InterpolateResponse.from_wire(loads_wire(resp.content, "response"))
answer.validate_against(request)

for i, blob in enumerate(answer.frames):
    pixels = decode_png_gray(blob)
    print(f"frame {i}: {pixels.shape[1]}x{pixels.shape[0]}, "
          f"mean intensity {pixels.mean():6.2f}")

server.shutdown()
server.server_close()
