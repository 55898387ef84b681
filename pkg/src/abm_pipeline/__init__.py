"""Two-stage prediction of attentional-blink magnitude from CNN features and fMRI."""
