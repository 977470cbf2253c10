# Few-shot image generation with structural and frequency discriminators
